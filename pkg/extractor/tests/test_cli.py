"""Command-line behavior: flag validation, exit codes, artifacts.

The happy paths stick to the cheap backbones (audio, scene) so the suite
does not rebuild the giant nets once per invocation.
"""

import json

import pytest

from vidcap.featio import load_manifest, read_fvec

from vidextract.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.err


class TestUsage:
    def test_no_source(self, capsys, tmp_path):
        code, err = run(capsys, "--out", str(tmp_path))
        assert code == 1
        assert "exactly one of --video and --dir" in err

    def test_both_sources(self, capsys, tmp_path, clips):
        code, err = run(capsys, "--video", str(clips["clip"]),
                        "--dir", str(clips["dir"]), "--out", str(tmp_path))
        assert code == 1

    def test_missing_out_flag(self, capsys, clips):
        code, err = run(capsys, "--video", str(clips["clip"]))
        assert code == 1
        assert "--out" in err

    def test_manifest_requires_caption(self, capsys, tmp_path, clips):
        code, err = run(capsys, "--video", str(clips["clip"]),
                        "--out", str(tmp_path), "--kinds", "audio",
                        "--manifest-append", str(tmp_path / "m.jsonl"))
        assert code == 1
        assert "--caption" in err

    def test_caption_requires_manifest(self, capsys, tmp_path, clips):
        code, err = run(capsys, "--video", str(clips["clip"]),
                        "--out", str(tmp_path), "--kinds", "audio",
                        "--caption", "stray")
        assert code == 1
        assert "--manifest-append" in err

    def test_empty_kinds(self, capsys, tmp_path, clips):
        code, err = run(capsys, "--video", str(clips["clip"]),
                        "--out", str(tmp_path), "--kinds", ", ,")
        assert code == 1
        assert "no stream kinds" in err


class TestSetupExit:
    def test_missing_weights_exit_3(self, capsys, tmp_path, clips):
        code, err = run(capsys, "--video", str(clips["clip"]),
                        "--out", str(tmp_path), "--kinds", "scene",
                        "--weights-dir", str(tmp_path))
        assert code == 3
        assert ".pth" in err
        assert "--allow-random-init" in err


class TestJobExit:
    def test_unknown_kind(self, capsys, tmp_path, clips):
        code, err = run(capsys, "--video", str(clips["clip"]),
                        "--out", str(tmp_path), "--kinds", "flow")
        assert code == 2
        assert "flow" in err

    def test_missing_video(self, capsys, tmp_path):
        code, err = run(capsys, "--video", str(tmp_path / "ghost.mp4"),
                        "--out", str(tmp_path), "--kinds", "audio",
                        "--allow-random-init")
        assert code == 2
        assert "ghost.mp4" in err

    def test_dir_without_videos(self, capsys, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        code, err = run(capsys, "--dir", str(empty), "--out", str(tmp_path),
                        "--kinds", "audio")
        assert code == 2
        assert "no video files" in err

    def test_garbage_video(self, capsys, tmp_path):
        # even an audio-only job must reject an undecodable clip
        bad = tmp_path / "junk.mp4"
        bad.write_bytes(b"not a container")
        code, err = run(capsys, "--video", str(bad), "--out", str(tmp_path),
                        "--kinds", "audio")
        assert code == 2
        assert "junk.mp4" in err


class TestPipeline:
    def test_single_video_with_manifest(self, capsys, tmp_path, clips):
        out = tmp_path / "feats"
        manifest = tmp_path / "dataset.jsonl"
        code, err = run(capsys, "--video", str(clips["clip"]),
                        "--kinds", "scene,audio", "--out", str(out),
                        "--allow-random-init",
                        "--manifest-append", str(manifest),
                        "--caption", "a bar drifts over a gradient",
                        "--split", "train")
        assert code == 0, err
        assert read_fvec(out / "clip.scene.fvec").values.shape == (40, 2048)
        assert read_fvec(out / "clip.audio.fvec").values.shape == (1, 1024)
        assert (out / "clip.scene.fvec.json").exists()
        loaded = load_manifest(manifest)
        assert loaded.entries[0].video_id == "clip"
        assert loaded.entries[0].split == "train"
        assert loaded.entries[0].captions == ["a bar drifts over a gradient"]
        assert "clip: wrote 2 streams" in err

    def test_directory_mode(self, capsys, tmp_path, clips):
        out = tmp_path / "feats"
        code, err = run(capsys, "--dir", str(clips["dir"]),
                        "--kinds", "audio", "--out", str(out))
        assert code == 0, err
        assert read_fvec(out / "clip.audio.fvec").values.shape == (1, 1024)
        assert read_fvec(out / "quiet.audio.fvec").values.shape == (0, 1024)
        assert read_fvec(out / "muted.audio.fvec").values.shape == (0, 1024)

    def test_duplicate_manifest_append_fails(self, capsys, tmp_path, clips):
        manifest = tmp_path / "m.jsonl"
        argv = ("--video", str(clips["clip"]), "--kinds", "audio",
                "--out", str(tmp_path / "f"),
                "--manifest-append", str(manifest), "--caption", "again")
        code, _ = run(capsys, *argv)
        assert code == 0
        code, err = run(capsys, *argv)
        assert code == 2
        assert "already has an entry" in err

    def test_help_lists_every_flag(self, capsys):
        with pytest.raises(SystemExit):
            main(["--help"])
        out = capsys.readouterr().out
        for flag in ("--video", "--dir", "--kinds", "--out",
                     "--manifest-append", "--caption", "--split",
                     "--weights-dir", "--allow-random-init"):
            assert flag in out
