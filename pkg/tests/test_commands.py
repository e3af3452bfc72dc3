"""Tests for motionfuse.commands and the CLI, run end to end on a tiny configuration."""

import sys
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path
from unittest.mock import patch

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from motionfuse.backbone import Conditions
from motionfuse.cli import EXIT_GRADCHECK, EXIT_RUNTIME, EXIT_VALIDATION, main
from motionfuse.commands import (
    clip_conditions,
    cmd_ablate,
    cmd_eval,
    cmd_gen_data,
    cmd_gradcheck,
    cmd_sample,
    cmd_sensitivity,
    cmd_train,
    load_model,
    overfit_ratio,
    select_conditions,
)
from motionfuse.config import RunConfig
from motionfuse.data import clip_dirs, read_clip
from motionfuse.diffusion import video_to_latent
from motionfuse.errors import ConfigError, TrainingError
from motionfuse.gradcheck import CheckResult
from motionfuse.metrics import MetricReport
from motionfuse.storage import load_tensor

# ---------------------------------------------------------------------------
# Shared fixtures
# ---------------------------------------------------------------------------


def _tiny(root, **kw):
    cfg = RunConfig(
        dim=12,
        blocks=1,
        heads=2,
        p=2,
        q=1,
        lora_rank=2,
        prompt_len=2,
        vocab=16,
        frames=2,
        height=8,
        width=8,
        clips=4,
        batch_size=2,
        train_steps=3,
        checkpoint_every=2,
        log_every=1,
        steps=2,
        data_dir=str(Path(root) / "data"),
        out_dir=str(Path(root) / "run"),
    )
    return replace(cfg, **kw).validate()


class _Quiet(unittest.TestCase):
    """Temporary workspace with command output silenced."""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)
        self.cfg = _tiny(self.root)
        for name in ("log_info", "log_ok", "log_warn", "log_table"):
            patcher = patch(f"motionfuse.commands.{name}")
            setattr(self, name, patcher.start())
            self.addCleanup(patcher.stop)

    def tearDown(self):
        self._tmp.cleanup()


# ---------------------------------------------------------------------------
# Tests: gen-data
# ---------------------------------------------------------------------------


class TestGenData(_Quiet):
    def test_writes_index_and_clips(self):
        root = cmd_gen_data(self.cfg)
        names = (root / "clips.txt").read_text().split()
        self.assertEqual(len(names), 4)
        for name in names:
            self.assertTrue((root / name / "video.ten1").exists())
            self.assertTrue((root / name / "camera.txt").exists())
        blank = [n for n in names if read_clip(root / n).camera_only]
        self.assertEqual(len(blank), 2)

    def test_same_seed_same_bytes(self):
        a = cmd_gen_data(self.cfg)
        b = cmd_gen_data(replace(self.cfg, data_dir=str(self.root / "again")))
        for name in (a / "clips.txt").read_text().split():
            for part in ("video.ten1", "camera.txt"):
                self.assertEqual((a / name / part).read_bytes(), (b / name / part).read_bytes())


# ---------------------------------------------------------------------------
# Tests: train
# ---------------------------------------------------------------------------


class TestTrain(_Quiet):
    def setUp(self):
        super().setUp()
        cmd_gen_data(self.cfg)

    def test_loss_log_and_checkpoints(self):
        result = cmd_train(self.cfg)
        out = Path(self.cfg.out_dir)
        lines = (out / "loss.log").read_text().splitlines()
        self.assertEqual(len(lines), 3)
        for i, line in enumerate(lines, 1):
            step, sigma, loss = line.split()
            self.assertEqual(int(step), i)
            self.assertGreater(float(sigma), 0.0)
            self.assertTrue(np.isfinite(float(loss)))
        self.assertTrue((out / "ckpt-000002" / "manifest.txt").exists())
        self.assertEqual(result["checkpoint"], out / "final")
        self.assertEqual(len(result["losses"]), 3)

    def test_deterministic(self):
        a = cmd_train(self.cfg)["losses"]
        b = cmd_train(replace(self.cfg, out_dir=str(self.root / "run2")))["losses"]
        self.assertEqual(a, b)

    def test_control_finetune_keeps_backbone(self):
        base = cmd_train(self.cfg)["checkpoint"]
        ft = replace(
            self.cfg,
            train_mode="control-finetune",
            init_from=str(base),
            out_dir=str(self.root / "ft"),
        )
        tuned = cmd_train(ft)["checkpoint"]
        _, before = load_model(base)
        _, after = load_model(tuned)
        self.assertEqual(before.checksum("backbone"), after.checksum("backbone"))
        self.assertNotEqual(before.checksum("fusion"), after.checksum("fusion"))

    def test_missing_dataset(self):
        with self.assertRaises(ConfigError):
            cmd_train(replace(self.cfg, data_dir=str(self.root / "nowhere")))

    def test_shape_mismatch(self):
        with self.assertRaises(ConfigError):
            cmd_train(replace(self.cfg, height=4, width=4))

    def test_overfit_ratio(self):
        self.assertEqual(overfit_ratio([4.0, 2.0], window=1), (4.0, 2.0, 0.5))
        self.assertIsNone(overfit_ratio([]))

    def test_loss_decreases_on_toy_run(self):
        cfg = replace(self.cfg, train_steps=600, lr=3e-3, checkpoint_every=1000, log_every=1000)
        first, last, ratio = cmd_train(cfg)["summary"]
        self.assertLess(last, first)
        self.assertLess(ratio, 1.0)


# ---------------------------------------------------------------------------
# Tests: sample and eval
# ---------------------------------------------------------------------------


class TestSampleAndEval(_Quiet):
    def setUp(self):
        super().setUp()
        cmd_gen_data(self.cfg)
        self.ckpt = cmd_train(replace(self.cfg, train_steps=1))["checkpoint"]
        self.data = Path(self.cfg.data_dir)
        self.clip = self.data / (self.data / "clips.txt").read_text().split()[0]

    def test_sample_outputs(self):
        out = self.root / "gen"
        video = cmd_sample(self.cfg, self.ckpt, self.clip, "joint", out)
        self.assertEqual(video.shape, (3, 2, 8, 8))
        self.assertTrue(np.array_equal(load_tensor(out / "video.ten1"), video))
        self.assertEqual(len(list((out / "frames").iterdir())), 2)
        self.assertTrue(video.min() >= 0.0 and video.max() <= 1.0)

    def test_sample_is_seeded(self):
        a = cmd_sample(self.cfg, self.ckpt, self.clip, "joint", self.root / "a")
        b = cmd_sample(self.cfg, self.ckpt, self.clip, "joint", self.root / "b")
        self.assertTrue(np.array_equal(a, b))

    def test_unconditional_sample(self):
        cmd_sample(self.cfg, self.ckpt, None, "joint", self.root / "u")
        self.assertEqual((self.root / "u" / "prompt.txt").read_text(), "\n")

    def test_select_conditions(self):
        cond = Conditions("x", np.ones((6, 2, 2, 2)), np.ones((3, 2, 2, 2)), np.ones((1, 2, 1, 1)))
        self.assertFalse(select_conditions(cond, "camera").pose.any())
        self.assertTrue(select_conditions(cond, "camera").plucker.any())
        self.assertFalse(select_conditions(cond, "human").plucker.any())
        self.assertEqual(select_conditions(cond, "none").prompt, "")
        with self.assertRaises(ConfigError):
            select_conditions(cond, "both")

    def test_eval_of_identical_sets(self):
        report = cmd_eval(self.cfg, self.data, self.data, self.root / "eval")
        self.assertEqual(report.pairs, 4)
        self.assertEqual(report.count("rot_err"), 4)
        self.assertEqual(report.count("pose_err"), 2)
        self.assertAlmostEqual(report.mean("rot_err"), 0.0, places=4)
        self.assertEqual(report.mean("kpts_err"), 0.0)
        self.assertEqual(report.mean("pose_err"), 0.0)
        self.assertEqual(report.mean("det_err"), 0.0)
        again = MetricReport.parse_kv((self.root / "eval" / "report.kv").read_text())
        self.assertEqual(again.values, report.values)

    def test_eval_warns_on_unpaired(self):
        gen = self.root / "gen"
        cmd_sample(self.cfg, self.ckpt, self.clip, "joint", gen / self.clip.name)
        report = cmd_eval(self.cfg, gen, self.data, self.root / "eval")
        self.assertEqual(report.pairs, 1)
        self.assertTrue(any("unpaired" in c[0][0] for c in self.log_warn.call_args_list))

    def test_sensitivity(self):
        wins, n = cmd_sensitivity(self.cfg, self.ckpt, clips=2)
        self.assertEqual(n, 2)
        self.assertTrue(0 <= wins <= 2)
        self.assertIn(f"wins {wins}/2", (Path(self.cfg.out_dir) / "sensitivity.txt").read_text())

    def _render_own_clip(self, clips):
        """Stand-in sampler whose video is exactly the clip its conditions came from."""

        def render(params, mcfg, dcfg, cond, *args):
            for clip in clips:
                own = clip_conditions(mcfg, clip)
                if own.prompt == cond.prompt and np.array_equal(own.pose, cond.pose):
                    return video_to_latent(clip.video)
            raise AssertionError("conditions match no clip")

        return render

    def _exact_estimators(self, clips):
        def find(video):
            return next(c for c in clips if np.allclose(c.video, video, atol=1e-12))

        skeletons = patch(
            "motionfuse.commands.estimate_skeletons", side_effect=lambda v: find(v).skeletons
        )
        trajectory = patch(
            "motionfuse.commands.estimate_trajectory",
            side_effect=lambda v, intr, depth: find(v).trajectory,
        )
        return skeletons, trajectory

    def test_own_conditions_win_when_model_follows_them(self):
        clips = [read_clip(d) for d in clip_dirs(self.data)]
        skeletons, trajectory = self._exact_estimators(clips)
        with skeletons, trajectory, patch(
            "motionfuse.commands.sample", side_effect=self._render_own_clip(clips)
        ):
            wins, n = cmd_sensitivity(self.cfg, self.ckpt, clips=2)
        self.assertEqual((wins, n), (2, 2))

    def test_model_ignoring_conditions_never_wins(self):
        clips = [read_clip(d) for d in clip_dirs(self.data)]
        skeletons, trajectory = self._exact_estimators(clips)
        same = video_to_latent(clips[0].video)
        with skeletons, trajectory, patch("motionfuse.commands.sample", return_value=same):
            wins, n = cmd_sensitivity(self.cfg, self.ckpt, clips=2)
        self.assertEqual((wins, n), (0, 2))


# ---------------------------------------------------------------------------
# Tests: gradcheck and ablate
# ---------------------------------------------------------------------------


class TestGradcheckCommand(_Quiet):
    @patch("motionfuse.commands.suite", return_value=[CheckResult("matmul", 1e-9, 1e-4)])
    def test_pass(self, _suite):
        self.assertTrue(cmd_gradcheck(self.cfg))

    @patch("motionfuse.commands.suite", return_value=[CheckResult("matmul", 0.5, 1e-4)])
    def test_fail(self, _suite):
        self.assertFalse(cmd_gradcheck(self.cfg, inject_fault=True))
        self.log_warn.assert_called_once()


class TestAblate(_Quiet):
    def test_four_curves(self):
        cmd_gen_data(self.cfg)
        curves = cmd_ablate(replace(self.cfg, train_steps=2))
        self.assertEqual(sorted(curves), ["add", "controlnet", "full", "no-prior"])
        lines = (Path(self.cfg.out_dir) / "ablation.txt").read_text().splitlines()
        self.assertEqual(lines[0], "# step full add controlnet no-prior")
        self.assertEqual(len(lines), 3)
        for name in curves:
            self.assertTrue((Path(self.cfg.out_dir) / name / "final" / "manifest.txt").exists())


# ---------------------------------------------------------------------------
# Tests: CLI exit codes
# ---------------------------------------------------------------------------


class TestCli(unittest.TestCase):
    def _exit(self, argv):
        with self.assertRaises(SystemExit) as ctx:
            main(argv)
        return ctx.exception.code

    @patch("motionfuse.cli.log_err")
    def test_invalid_config(self, mock_err):
        self.assertEqual(self._exit(["train", "--set", "heads=5"]), EXIT_VALIDATION)
        mock_err.assert_called_once()

    @patch("motionfuse.cli.log_err")
    def test_missing_config_file(self, _err):
        code = self._exit(["gen-data", "--config", "/nonexistent/run.cfg"])
        self.assertEqual(code, EXIT_VALIDATION)

    @patch("motionfuse.cli.log_err")
    @patch("motionfuse.cli.cmd_train", side_effect=TrainingError("step 3: non-finite loss"))
    def test_runtime_failure(self, _train, mock_err):
        self.assertEqual(self._exit(["train"]), EXIT_RUNTIME)
        self.assertIn("step 3", mock_err.call_args[0][0])

    @patch("motionfuse.cli.cmd_gradcheck", return_value=False)
    def test_gradcheck_failure(self, _gc):
        self.assertEqual(self._exit(["gradcheck", "--inject-fault"]), EXIT_GRADCHECK)

    @patch("motionfuse.cli.cmd_gen_data")
    def test_success(self, mock_gen):
        self.assertEqual(self._exit(["gen-data", "--seed", "4", "--set", "clips=2"]), 0)
        cfg = mock_gen.call_args[0][0]
        self.assertEqual(cfg.seed, 4)
        self.assertEqual(cfg.clips, 2)

    @patch("motionfuse.cli.cmd_train", side_effect=KeyboardInterrupt)
    def test_interrupt_exits_cleanly(self, _train):
        self.assertEqual(self._exit(["train"]), 0)


if __name__ == "__main__":
    unittest.main()
