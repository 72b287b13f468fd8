"""Acceptance suite: the seven exit criteria.

Each test prints one PASS/FAIL line (run with ``pytest -s`` to see them
all). Tolerances are pinned here and nowhere else. Heavy runs share
session fixtures; everything is seeded, so results are reproducible
bit-for-bit.

Method notes:
* Noisy-spectrum/model comparisons are made on log-band medians
  (~12 bands per decade): per-bin Welch scatter at the affordable
  averaging counts has chi^2 tails wider than the stated tolerances, so
  a literal per-bin reading would fail any correct implementation.
  Null positions are still checked against the raw per-bin grid.
* Mode-vs-mode comparisons ratio paired-seed runs, which cancels the
  noise realization bin-by-bin.
"""

import numpy as np
import pytest

from fsostab.cli import main as cli_main
from fsostab.experiment import (
    CHANNEL_GRID_THZ,
    calibrate_default_models,
    channel_sweep,
    run_three_modes,
    spot_phase_noise,
    zero_model,
)
from fsostab.link import LinkConfig, NoiseInputs, ServoConfig, run_link
from fsostab.noise import estimate_psd, ssb_phase_noise
from fsostab.spectral import (
    delayed_combination_oracle,
    atm_variant_report,
    log_band_medians,
    meas_transfer_atm,
    meas_transfer_primary,
    meas_transfer_secondary,
    random_combination,
)

SCALED_T = 1.0e-3
SCALED_FS = 100.0e3
SCALED_SERVO = ServoConfig(kp=0.2, ki=1.0e5)


def report(criterion: str, ok: bool, detail: str):
    print(f"[criterion {criterion}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="session")
def models():
    return calibrate_default_models()


def scaled_config(**kw):
    kw.setdefault("servo", SCALED_SERVO)
    return LinkConfig(
        t_one_way_s=SCALED_T, link_length_m=None, fs_hz=SCALED_FS, n_samples=2**21, **kw
    )


def run_source_only(models, src, mode, config, seed=7):
    mdl = {k: (models[k] if k == src else zero_model()) for k in models}
    inputs = NoiseInputs.from_models(mdl, config.fs_hz, config.n_samples, seed, config.nu_p_hz)
    meas, trace = run_link(config, inputs, mode=mode)
    assert not trace.flagged, trace.flags
    return meas, mdl[src]


def banded_model_deviation(est, model_psd_fn, factor_fn, f_lo, f_hi, null_floor):
    sel = est.band_mask & (est.freqs > f_lo) & (est.freqs < f_hi)
    f = est.freqs[sel]
    factor = factor_fn(f)
    keep = factor > null_floor * factor.max()
    dev = 10.0 * np.log10(est.psd[sel][keep] / (factor[keep] * model_psd_fn(f[keep])))
    return log_band_medians(f[keep], dev)


def find_null(est, f0, halfwidth=30.0):
    sel = (est.freqs > f0 - halfwidth) & (est.freqs < f0 + halfwidth)
    return est.freqs[sel][np.argmin(est.psd[sel])]


def test_criterion_1_delayed_copy_identity_oracle():
    """>= 20 random combinations: time-domain PSD ratio within +-1 dB of
    the analytic factor at >= 95% of bins more than 40 dB above nulls."""
    rng = np.random.default_rng(2026)
    fs = 4096.0
    worst_frac, worst_dev = 1.0, 0.0
    for _ in range(20):
        comb = random_combination(rng, fs)
        freqs, ratio, factor = delayed_combination_oracle(
            comb, fs, 2**17, seed=int(rng.integers(2**62))
        )
        keep = np.isfinite(ratio) & (factor > 1e-4 * factor.max())
        keep[:3] = False
        dev = 10.0 * np.log10(ratio[keep] / factor[keep])
        worst_frac = min(worst_frac, float(np.mean(np.abs(dev) <= 1.0)))
        worst_dev = max(worst_dev, float(np.max(np.abs(dev))))
    report(
        "1",
        worst_frac >= 0.95,
        f"20 combinations, worst in-tolerance fraction {worst_frac:.3f} "
        f"(need >= 0.95), worst deviation {worst_dev:.2f} dB",
    )


def test_criterion_2_secondary_transfer(models):
    """Secondary-only run reproduces [2 - 2cos(2 pi f T)] * S_s within
    +-1.5 dB away from nulls; first two nulls at k/T within one bin."""
    config = scaled_config()
    meas, model = run_source_only(models, "secondary", "doppler", config)
    est = estimate_psd(meas, segment_len=2**16)
    fb, dev = banded_model_deviation(
        est, model.eval, lambda f: meas_transfer_secondary(f, SCALED_T), 5.0, 2500.0, 1e-4
    )
    res = est.freqs[1] - est.freqs[0]
    nulls = [find_null(est, k / SCALED_T) for k in (1, 2)]
    null_err = max(abs(nulls[0] - 1.0 / SCALED_T), abs(nulls[1] - 2.0 / SCALED_T))
    ok = np.max(np.abs(dev)) <= 1.5 and null_err <= res
    report(
        "2a",
        ok,
        f"secondary transfer: max band deviation {np.max(np.abs(dev)):.2f} dB "
        f"(tol 1.5), null offsets {null_err:.2f} Hz (bin {res:.2f} Hz)",
    )


def test_criterion_2_primary_transfer(models):
    """Primary-only closed loop reproduces [1/2 - 1/2 cos(4 pi f T)] * S_p
    within +-1.5 dB away from nulls; first two nulls at k/(2T) within one
    bin."""
    config = scaled_config()
    meas, model = run_source_only(models, "primary", "doppler", config)
    est = estimate_psd(meas, segment_len=2**16)
    fb, dev = banded_model_deviation(
        est, model.eval, lambda f: meas_transfer_primary(f, SCALED_T), 5.0, 1200.0, 1e-4
    )
    res = est.freqs[1] - est.freqs[0]
    nulls = [find_null(est, k / (2 * SCALED_T)) for k in (1, 2)]
    null_err = max(abs(nulls[0] - 0.5 / SCALED_T), abs(nulls[1] - 1.0 / SCALED_T))
    ok = np.max(np.abs(dev)) <= 1.5 and null_err <= res
    report(
        "2b",
        ok,
        f"primary transfer: max band deviation {np.max(np.abs(dev)):.2f} dB "
        f"(tol 1.5), null offsets {null_err:.2f} Hz (bin {res:.2f} Hz)",
    )


def test_criterion_3_atmospheric_variant(models):
    """The report's low-frequency ratio is 2.5 +- 0.1 dB, and the closed
    loop matches the chain-derived variant (not the printed one) within
    +-1.5 dB: the time-domain chain is the ground truth."""
    rep = atm_variant_report(SCALED_T, [1e-4 / SCALED_T])
    ratio_db = float(rep["ratio_db"][0])

    config = scaled_config()
    mdl = {k: (models[k] if k == "atmosphere" else zero_model()) for k in models}
    inputs = NoiseInputs.from_models(mdl, config.fs_hz, config.n_samples, 7, config.nu_p_hz)
    stab, _ = run_link(config, inputs, mode="doppler")
    unstab, _ = run_link(config, inputs, mode="unstabilized")
    es = estimate_psd(stab, segment_len=2**18)
    eu = estimate_psd(unstab, segment_len=2**18)
    sel = es.band_mask & (es.freqs > 2.0) & (es.freqs < 100.0)
    meas_factor = es.psd[sel] / eu.psd[sel]
    f = es.freqs[sel]
    _, dev_derived = log_band_medians(f, 10 * np.log10(meas_factor / meas_transfer_atm(f, SCALED_T, "derived")))
    low = f < 40.0  # below fT ~ 0.04 the printed/derived gap stays ~2.5 dB
    _, dev_printed = log_band_medians(f[low], 10 * np.log10(meas_factor[low] / meas_transfer_atm(f[low], SCALED_T, "printed")))
    ok = (
        abs(ratio_db - 2.5) <= 0.1
        and np.max(np.abs(dev_derived)) <= 1.5
        and np.min(np.abs(dev_printed)) > 1.5
    )
    report(
        "3",
        ok,
        f"low-f variant ratio {ratio_db:.3f} dB (2.5 +- 0.1); simulated vs derived "
        f"max {np.max(np.abs(dev_derived)):.2f} dB (tol 1.5); vs printed min "
        f"{np.min(np.abs(dev_printed)):.2f} dB (must exceed 1.5)",
    )


@pytest.fixture(scope="session")
def sweep_result(models):
    base = LinkConfig(fs_hz=20.0e3, n_samples=2**22)
    return channel_sweep(base, models, 101)


def test_criterion_4_reference_anchors(sweep_result):
    """19-channel physical-mode sweep recovers the reference anchors:
    unstabilized mean -10.5 +- 1 dBc/Hz, stabilized means within +-2 of
    -39.6 (doppler) / -39.9 (group delay), suppression >= 28 dB at every
    channel, stabilized spread <= 4 dB."""
    r = sweep_result
    assert r.complete, r.flags
    un = r.summaries["unstabilized"].mean_dbc
    do = r.summaries["doppler"].mean_dbc
    gd = r.summaries["group-delay"].mean_dbc
    min_sup = min(r.suppression_db.values())
    spreads = {
        m: max(r.spots_dbc[(c, m)] for c in r.channels_thz)
        - min(r.spots_dbc[(c, m)] for c in r.channels_thz)
        for m in ("doppler", "group-delay")
    }
    ok = (
        abs(un - (-10.5)) <= 1.0
        and abs(do - (-39.6)) <= 2.0
        and abs(gd - (-39.9)) <= 2.0
        and min_sup >= 28.0
        and max(spreads.values()) <= 4.0
    )
    report(
        "4",
        ok,
        f"means: unstab {un:.2f} (-10.5 +- 1), doppler {do:.2f} (-39.6 +- 2), "
        f"group-delay {gd:.2f} (-39.9 +- 2); min suppression {min_sup:.2f} dB "
        f"(>= 28); max stabilized spread {max(spreads.values()):.2f} dB (<= 4)",
    )


def test_full_sweep_outputs(sweep_result, tmp_path):
    """Companion to criterion 4: the emitted sweep CSV carries all
    19 x 3 rows and a manifest."""
    from fsostab.experiment import emit_outputs

    outputs, status = emit_outputs(sweep_result, tmp_path, {"acceptance": True})
    rows = (tmp_path / "sweep.csv").read_text().strip().splitlines()
    assert status == 0
    assert len(rows) == 1 + 19 * 3
    assert (tmp_path / "manifest.json").exists()


def test_criterion_5_quiet_secondary_floor(models):
    """With the secondary silenced the stabilized spot reaches the
    -90 +- 3 dBc/Hz regime and the round-trip primary term dominates the
    predicted decomposition to within 1 dB."""
    fs, n = 100.0e3, 2**24
    servo = ServoConfig(kp=0.2, ki=5.0e4, kii=6.0e8)
    config = LinkConfig(fs_hz=fs, n_samples=n, servo=servo)  # nu_s = nu_p
    mdl = dict(models)
    mdl["secondary"] = zero_model()
    inputs = NoiseInputs.from_models(mdl, fs, n, 13, config.nu_p_hz)
    meas, trace = run_link(config, inputs, mode="group-delay")
    assert not trace.flagged, trace.flags
    est = estimate_psd(meas, segment_len=2**20)
    spot = spot_phase_noise(est, 10.0)
    t = config.t_one_way
    pred_primary = meas_transfer_primary(10.0, t) * models["primary"].eval(10.0)
    pred_total = pred_primary + meas_transfer_atm(10.0, t, "derived") * models["atmosphere"].eval(10.0)
    dominance = 10.0 * np.log10(pred_total / pred_primary)
    consistency = spot - ssb_phase_noise(pred_total)
    ok = abs(spot - (-90.0)) <= 3.0 and dominance <= 1.0 and abs(consistency) <= 1.0
    report(
        "5",
        ok,
        f"quiet-secondary spot {spot:.2f} dBc/Hz (-90 +- 3); primary-term dominance "
        f"{dominance:.3f} dB (<= 1); sim minus predicted {consistency:.2f} dB",
    )


def test_criterion_6_actuator_physics(models):
    """Atmosphere-only runs at the 197.2 THz edge channel: the doppler
    residual sits 33.5 +- 1 dB below the unstabilized level (the
    (dnu/nu_p)^2 law) and the group-delay residual is >= 20 dB below the
    doppler one inside the servo bandwidth."""
    fs, n = 200.0e3, 2**22
    servo = ServoConfig(kp=0.2, ki=1.5e5)
    config = LinkConfig(nu_s_hz=197.2e12, fs_hz=fs, n_samples=n, servo=servo)
    mdl = {k: (models[k] if k == "atmosphere" else zero_model()) for k in models}
    inputs = NoiseInputs.from_models(mdl, fs, n, 11, config.nu_p_hz)
    est = {}
    for mode in ("unstabilized", "doppler", "group-delay"):
        meas, trace = run_link(config, inputs, mode=mode)
        assert not trace.flagged, trace.flags
        est[mode] = estimate_psd(meas, segment_len=2**19)
    e = est["doppler"]
    sel = e.band_mask & (e.freqs >= 1.0) & (e.freqs <= 30.0)
    f = e.freqs[sel]
    _, dop_vs_un = log_band_medians(f, 10 * np.log10(est["doppler"].psd[sel] / est["unstabilized"].psd[sel]))
    _, gd_vs_dop = log_band_medians(f, 10 * np.log10(est["group-delay"].psd[sel] / est["doppler"].psd[sel]))
    law_db = float(np.median(dop_vs_un))
    contrast = float(np.max(gd_vs_dop))
    ok = abs(law_db - (-33.5)) <= 1.0 and contrast <= -20.0
    report(
        "6",
        ok,
        f"doppler vs unstabilized {law_db:.2f} dB (-33.5 +- 1); group-delay vs "
        f"doppler worst band {contrast:.2f} dB (<= -20)",
    )


def test_criterion_7_manifest_determinism(tmp_path):
    """Two CLI runs from the same manifest produce byte-identical CSVs."""
    import json

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"servo": {"ki_per_s": 1000.0}, "fs_hz": 4000.0, "n_samples": 2**16}))
    a, b = tmp_path / "a", tmp_path / "b"
    rc1 = cli_main(["simulate", "--config", str(cfg), "--seed", "19", "--out", str(a), "--emit-trace"])
    rc2 = cli_main(["simulate", "--config", str(a / "manifest.json"), "--seed", "19", "--out", str(b), "--emit-trace"])
    names = [
        "spectrum_unstabilized.csv",
        "spectrum_doppler.csv",
        "spectrum_group-delay.csv",
        "trace_doppler.csv",
        "summary.txt",
    ]
    same = all((a / nm).read_bytes() == (b / nm).read_bytes() for nm in names)
    ok = rc1 == 0 and rc2 == 0 and same
    report("7", ok, f"rerun from manifest: {len(names)} outputs byte-identical = {same}")
