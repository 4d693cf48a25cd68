"""
命令行入口 - ingest / synth / propagate / spectrum / train / embed / evaluate / report / run
"""

import functools
import sys

import click

from pipeline import GiamPipeline
from utils.console_log import log_error, log_ok
from utils.errors import HinError
from utils.run_config import parse_config


def common_options(func):
    """所有子命令共享的配置参数"""
    @click.option("--config", "config_file", type=click.Path(), default=None, help="key = value 配置文件")
    @click.option("--seed", type=int, default=None, help="覆盖配置中的随机种子")
    @click.option("--output", type=str, default=None, help="输出目录（默认取环境变量 GIAM_OUTPUT_ROOT）")
    @click.option("--variant", type=str, default=None, help="gcn / giam1 / giam2 / giam / giam3")
    @click.option("-k", "k", type=int, default=None, help="传播步数")
    @click.option("--nodes", type=str, default=None)
    @click.option("--edges", type=str, default=None)
    @click.option("--labels", type=str, default=None)
    @click.option("--quiet", is_flag=True, default=False, help="只输出警告和错误")
    @functools.wraps(func)
    def wrapper(config_file, seed, output, variant, k, nodes, edges, labels, quiet, **kwargs):
        overrides = {"seed": seed, "output": output, "variant": variant, "k": k, "nodes": nodes,
                     "edges": edges, "labels": labels, "subcommand": func.__name__.replace("_cmd", "")}
        if quiet:
            overrides["verbose"] = False
        return func(config_file=config_file, overrides=overrides, **kwargs)
    return wrapper


def run_guarded(action):
    """库代码抛出的错误在这里变成 ❌ 行和非零退出码"""
    try:
        action()
    except HinError as exc:
        log_error(str(exc))
        sys.exit(1)


@click.group()
def cli():
    """异构信息网络嵌入：约束传播 + 类型区分聚合"""


@cli.command("ingest")
@common_options
def ingest_cmd(config_file, overrides):
    """读入节点表和边表，输出图的规模统计"""
    def action():
        pipeline = GiamPipeline(parse_config(config_file, overrides))
        graph = pipeline.ingest()
        click.echo(f"nodes\t{graph.node_count}")
        click.echo(f"edges\t{len(graph.edges)}")
        click.echo(f"node_types\t{len(graph.type_order)}")
        click.echo(f"relation_types\t{len(graph.relation_types)}")
        for t in graph.type_order:
            start, stop = graph.type_index[t]
            click.echo(f"type:{t}\t{stop - start}")
    run_guarded(action)


@cli.command("synth")
@common_options
@click.option("--kind", type=click.Choice(["newman", "powerlaw"]), default="newman")
def synth_cmd(config_file, overrides, kind):
    """生成合成基准图和真实标签"""
    def action():
        overrides["synthetic"] = kind
        GiamPipeline(parse_config(config_file, overrides, check_paths=False)).synthesize()
    run_guarded(action)


@cli.command("propagate")
@common_options
@click.option("--dense", is_flag=True, default=False, help="同时写出稠密网格CSV")
def propagate_cmd(config_file, overrides, dense):
    """计算并写出 k 步传播矩阵"""
    def action():
        pipeline = GiamPipeline(parse_config(config_file, overrides))
        pipeline.ingest()
        state = pipeline.propagate(dense=dense)
        log_ok(f"传播矩阵: k={state.step}, nnz={state.matrix.nnz}")
    run_guarded(action)


@cli.command("spectrum")
@common_options
@click.option("--c-max", type=int, default=10, help="需要的最小特征值个数")
def spectrum_cmd(config_file, overrides, c_max):
    """输出马尔可夫生成元的特征值和混合窗口"""
    def action():
        pipeline = GiamPipeline(parse_config(config_file, overrides))
        pipeline.ingest()
        pipeline.spectrum(c_max)
        with open(pipeline.path("spectrum.tsv"), "r", encoding="utf-8") as f:
            click.echo(f.read(), nl=False)
    run_guarded(action)


@cli.command("train")
@common_options
def train_cmd(config_file, overrides):
    """训练模型，写出训练历史和参数检查点"""
    def action():
        pipeline = GiamPipeline(parse_config(config_file, overrides))
        pipeline.ingest()
        pipeline.prepare()
        pipeline.train()
    run_guarded(action)


@cli.command("embed")
@common_options
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
def embed_cmd(config_file, overrides, checkpoint):
    """用检查点参数导出评估模式嵌入"""
    def action():
        pipeline = GiamPipeline(parse_config(config_file, overrides))
        pipeline.ingest()
        pipeline.prepare()
        pipeline.load_params(checkpoint)
        pipeline.embed()
    run_guarded(action)


@cli.command("evaluate")
@common_options
@click.option("--embeddings", "embeddings_path", type=click.Path(exists=True), required=True)
def evaluate_cmd(config_file, overrides, embeddings_path):
    """读嵌入文件和标签文件，写出评估报告"""
    def action():
        config = parse_config(config_file, overrides, check_paths=False)
        if not config.labels:
            raise HinError("evaluate 需要 --labels")
        report = GiamPipeline(config).evaluate_files(embeddings_path, config.labels)
        click.echo(report.to_frame().to_csv(index=False), nl=False)
    run_guarded(action)


@cli.command("report")
@common_options
@click.option("--kind", type=click.Choice(["newman", "powerlaw"]), default=None,
              help="不给出时读配置中的数据文件")
@click.option("--k-list", type=str, default="0,2,6,10", help="逗号分隔的步数")
@click.option("--grids", is_flag=True, default=False, help="写出每个 (k, 游走) 的稠密网格")
def report_cmd(config_file, overrides, kind, k_list, grids):
    """合成图上的传播诊断表"""
    def action():
        if kind:
            overrides["synthetic"] = kind
        pipeline = GiamPipeline(parse_config(config_file, overrides, check_paths=kind is None))
        if not kind:
            pipeline.ingest()
        steps = [int(x) for x in k_list.split(",") if x.strip()]
        table = pipeline.report(steps, grids=grids)
        click.echo(table.to_csv(index=False), nl=False)
    run_guarded(action)


@cli.command("run")
@common_options
def run_cmd(config_file, overrides):
    """完整流水线并写清单"""
    def action():
        GiamPipeline(parse_config(config_file, overrides)).run()
    run_guarded(action)


if __name__ == "__main__":
    cli()
