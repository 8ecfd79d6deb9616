"""The built-in validation corpus: twenty benign specimen analogs with labels.

Each analog is a loose caricature of a well-known worm family, written in the
specimen language. Eighteen replicate byte-identical copies of themselves;
two (the Fasong and Klez analogs) mutate their payload on every copy. The
templates are fixed strings, so generating the corpus is deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from avmas.canonical import canonical_bytes

MANIFEST_NAME = "manifest.json"
LABELS = ("Traditional", "Polymorphic")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusEntry:
    specimen_file: str
    analog_name: str
    ground_truth: str

    def to_dict(self) -> dict[str, str]:
        return {"specimen_file": self.specimen_file, "analog_name": self.analog_name,
                "ground_truth": self.ground_truth}


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[CorpusEntry, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"entries": [e.to_dict() for e in self.entries]}

    def counts(self) -> dict[str, int]:
        out = {label: 0 for label in LABELS}
        for entry in self.entries:
            out[entry.ground_truth] = out.get(entry.ground_truth, 0) + 1
        return out


# (file stem, analog name, ground truth, specimen source)
_TEMPLATES: list[tuple[str, str, str, str]] = [
    ("01_lovesan_analog", "Lovesan analog", "Traditional", """\
specimen lovesan-analog payload 0 16
PAYLOAD:LOVESAN-ANALOG-1
regset HKLM\\Software\\Microsoft\\Windows\\CurrentVersion\\Run\\updater "%SYSROOT%/msblast.exe"
replicate %SYSROOT%/msblast.exe mutate none
spawn msblast
sleep 2000
"""),
    ("02_conficker_analog", "Conficker analog", "Traditional", """\
specimen conficker-analog payload 0 16
PAYLOAD:CONFICKER-ANALOG
replicate %SYSROOT%/svchelper.dll mutate none
regset HKLM\\Software\\Microsoft\\Windows\\CurrentVersion\\Run\\netsvc "%SYSROOT%/svchelper.dll"
spawn netsvc
sleep 5000
exit last
"""),
    ("03_higuy_analog", "Higuy analog", "Traditional", """\
specimen higuy-analog payload 2 12
PAYLOAD:##HIGUY-ANALOG##
replicate /home/%USER%/shared/photo.scr mutate none
write /home/%USER%/shared/readme.txt "look at this"
regset HKCU\\Software\\Higuy\\sent "1"
"""),
    ("04_fasong_analog", "Fasong analog", "Polymorphic", """\
specimen fasong-analog payload 0 24
PAYLOAD:FASONG-ANALOG-GAME-PAYLD
replicate %SYSROOT%/benfgame.exe mutate randbytes 6
regset HKLM\\Software\\Microsoft\\Windows\\CurrentVersion\\Run\\game "%SYSROOT%/benfgame.exe"
spawn benfgame
"""),
    ("05_lovgate_analog", "Lovgate analog", "Traditional", """\
specimen lovgate-analog payload 0 14
PAYLOAD:LOVGATE-ANALOG
replicate %SYSROOT%/winrpc.exe mutate none
replicate %SYSROOT%/syshelp.exe mutate none
replicate /home/%USER%/shared/pics.exe mutate none
regset HKLM\\Software\\Microsoft\\Windows\\CurrentVersion\\Run\\rpc "%SYSROOT%/winrpc.exe"
spawn winrpc
spawn syshelp
"""),
    ("06_imaut_analog", "Imaut analog", "Traditional", """\
specimen imaut-analog payload 0 12
PAYLOAD:IMAUT-ANALOG
replicate /removable/autorun.exe mutate none
write /removable/autorun.inf "[autorun] open=autorun.exe"
regset HKCU\\Software\\Microsoft\\Windows\\CurrentVersion\\Policies\\Explorer\\NoFolderOptions "1"
"""),
    ("07_klez_analog", "Klez analog", "Polymorphic", """\
specimen klez-analog payload 0 32
PAYLOAD:KLEZ-ANALOG-PAYLOAD-BLOCK-012345
replicate %SYSROOT%/wqk.exe mutate xorkey
replicate /home/%USER%/shared/setup.exe mutate xorkey
replicate /home/%USER%/desktop/game.exe mutate xorkey
replicate /removable/install.exe mutate xorkey
regset HKLM\\Software\\Microsoft\\Windows\\CurrentVersion\\Run\\wqk "%SYSROOT%/wqk.exe"
spawn wqk
"""),
    ("08_kwbot_analog", "Kwbot analog", "Traditional", """\
specimen kwbot-analog payload 0 12
PAYLOAD:KWBOT-ANALOG
replicate %SYSROOT%/kernel32u.exe mutate none
regset HKLM\\Software\\Microsoft\\Windows\\CurrentVersion\\RunServices\\kernel "%SYSROOT%/kernel32u.exe"
spawn ircbot
sleep 60000
"""),
    ("09_mumu_analog", "Mumu analog", "Traditional", """\
specimen mumu-analog payload 0 11
PAYLOAD:MUMU-ANALOG
replicate %SYSROOT%/hack.exe mutate none
write %SYSROOT%/pass.dic "admin password 123456"
spawn hack
spawn scanner
exit 2
"""),
    ("10_mytob_analog", "Mytob analog", "Traditional", """\
specimen mytob-analog payload 0 12
PAYLOAD:MYTOB-ANALOG
replicate %SYSROOT%/taskgmr.exe mutate none
regset HKLM\\Software\\Microsoft\\Windows\\CurrentVersion\\Run\\taskgmr "%SYSROOT%/taskgmr.exe"
write /etc/hosts "127.0.0.1 update.example"
repeat 3 {
  sleep 1000
  regset HKCU\\Software\\Mytob\\tick "1"
}
"""),
    ("11_brontok_analog", "Brontok analog", "Traditional", """\
specimen brontok-analog payload 0 14
PAYLOAD:BRONTOK-ANALOG
replicate /home/%USER%/appdata/smss.exe mutate none
replicate %SYSROOT%/sendmail.scr mutate none
regset HKCU\\Software\\Microsoft\\Windows\\CurrentVersion\\Policies\\System\\DisableRegistryTools "1"
spawn smss
"""),
    ("12_xema_analog", "Xema analog", "Traditional", """\
specimen xema-analog payload 0 11
PAYLOAD:XEMA-ANALOG
replicate /removable/xema.exe mutate none
write /removable/autorun.inf "[autorun] open=xema.exe"
delete /removable/desktop.ini
"""),
    ("13_sober_analog", "Sober analog", "Traditional", """\
specimen sober-analog payload 0 12
PAYLOAD:SOBER-ANALOG
replicate %SYSROOT%/sysmms32.exe mutate none
write %SYSROOT%/stmsr.dat "queue"
write %SYSROOT%/stmsr.dat "queue sent"
regset HKLM\\Software\\Microsoft\\Windows\\CurrentVersion\\Run\\sysmms "%SYSROOT%/sysmms32.exe"
"""),
    ("14_swen_analog", "Swen analog", "Traditional", """\
specimen swen-analog payload 0 11
PAYLOAD:SWEN-ANALOG
replicate /home/%USER%/downloads/patch.exe mutate none
regset HKLM\\Software\\Microsoft\\Windows\\CurrentVersion\\Run\\patch "/home/%USER%/downloads/patch.exe"
regdel HKLM\\Software\\Microsoft\\Security\\AutoUpdate
"""),
    ("15_xorala_analog", "Xorala analog", "Traditional", """\
specimen xorala-analog payload 0 13
PAYLOAD:XORALA-ANALOG
replicate %SYSROOT%/notepad.exe mutate none
replicate %SYSROOT%/calc.exe mutate none
replicate %SYSROOT%/mspaint.exe mutate none
"""),
    ("16_virut_analog", "Virut analog", "Traditional", """\
specimen virut-analog payload 0 12
PAYLOAD:VIRUT-ANALOG
replicate %SYSROOT%/wininit.exe mutate none
spawn wininit
write /etc/hosts "127.0.0.1 irc.example"
sleep 30000
exit 1
"""),
    ("17_wullik_analog", "Wullik analog", "Traditional", """\
specimen wullik-analog payload 0 13
PAYLOAD:WULLIK-ANALOG
replicate %SYSROOT%/wullik.exe mutate none
replicate /home/%USER%/shared/readme.exe mutate none
regset HKLM\\Software\\Microsoft\\Windows\\CurrentVersion\\Run\\wullik "%SYSROOT%/wullik.exe"
"""),
    ("18_rontokbro_analog", "Rontokbro analog", "Traditional", """\
specimen rontokbro-analog payload 0 16
PAYLOAD:RONTOKBRO-ANALOG
replicate /home/%USER%/appdata/csrss.exe mutate none
replicate /home/%USER%/appdata/lsass.exe mutate none
spawn csrss
spawn lsass
regset HKCU\\Software\\Microsoft\\Windows\\CurrentVersion\\Run\\csrss "/home/%USER%/appdata/csrss.exe"
"""),
    ("19_yahlover_analog", "YahLover analog", "Traditional", """\
specimen yahlover-analog payload 0 15
PAYLOAD:YAHLOVER-ANALOG
replicate /removable/yahlover.exe mutate none
regset HKCU\\Software\\Microsoft\\Internet\\StartPage "http://yahlover.example"
regset HKCU\\Software\\Microsoft\\Internet\\StartPage "http://yahlover.example/home"
spawn yahlover
exit last
"""),
    ("20_orbina_analog", "Orbina analog", "Traditional", """\
specimen orbina-analog payload 0 13
PAYLOAD:ORBINA-ANALOG
repeat 2 {
  replicate %SYSROOT%/orbina.exe mutate none
}
write %SYSROOT%/orbina.cfg "interval=60"
delete %SYSROOT%/orbina.cfg
"""),
]


def templates() -> list[tuple[CorpusEntry, str]]:
    """The embedded specimens, in corpus order."""
    return [(CorpusEntry(f"{stem}.spec", name, label), text) for stem, name, label, text in _TEMPLATES]


def generate_corpus(output_dir: str | Path) -> CorpusManifest:
    """Write every specimen file plus ``manifest.json`` into ``output_dir``."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for entry, text in templates():
        (out / entry.specimen_file).write_bytes(text.encode("utf-8"))
        entries.append(entry)
    manifest = CorpusManifest(tuple(entries))
    (out / MANIFEST_NAME).write_bytes(canonical_bytes(manifest.to_dict()))
    return manifest


def load_manifest(corpus_dir: str | Path) -> CorpusManifest:
    path = Path(corpus_dir) / MANIFEST_NAME
    try:
        obj = json.loads(path.read_bytes())
        entries = tuple(CorpusEntry(e["specimen_file"], e["analog_name"], e["ground_truth"])
                        for e in obj["entries"])
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: malformed manifest ({exc})") from None
    for entry in entries:
        if entry.ground_truth not in LABELS:
            raise ManifestError(f"{path}: unknown label {entry.ground_truth!r}")
    return CorpusManifest(entries)
