"""
控制台输出 - 统一的带图标状态行，写到stderr，stdout留给命令行数据
"""

from rich.console import Console

console = Console(stderr=True, highlight=False)

# 全局开关，由配置中的 verbose 控制
_verbose = {"enabled": True}


def set_verbose(enabled: bool):
    """设置是否输出普通状态信息（警告和错误始终输出）"""
    _verbose["enabled"] = bool(enabled)


def is_verbose() -> bool:
    return _verbose["enabled"]


def log_info(message: str):
    if _verbose["enabled"]:
        console.print(message)


def log_ok(message: str):
    if _verbose["enabled"]:
        console.print(f"✅ {message}")


def log_warn(message: str):
    console.print(f"⚠️ {message}", style="yellow")


def log_error(message: str):
    console.print(f"❌ {message}", style="bold red")
