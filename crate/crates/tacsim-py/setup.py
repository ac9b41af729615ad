"""Builds the Rust extension with cargo; neither maturin nor
setuptools-rust is assumed to be installed."""

import shutil
import subprocess
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

CRATE_DIR = Path(__file__).parent.resolve()


class CargoBuildExt(build_ext):
    def build_extension(self, ext):
        subprocess.run(
            ["cargo", "build", "--release", "-p", "tacsim-py"],
            cwd=CRATE_DIR,
            check=True,
        )
        # cdylib lands in the workspace-level target directory
        built = CRATE_DIR.parent.parent / "target" / "release" / "libtacsim_py.so"
        dest = Path(self.get_ext_fullpath(ext.name))
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(built, dest)


setup(
    ext_modules=[Extension("tacsim_py", sources=[])],
    cmdclass={"build_ext": CargoBuildExt},
)
