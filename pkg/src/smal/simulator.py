"""Closed-loop episodes, actuating-angle sweeps and the sub-array layout study."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import actuation as act
from .environment import (
    Arc,
    CapsuleState,
    ResistanceModel,
    TubePath,
    advance,
    constrained_moment,
    moment_from_phase,
    phase_of,
    sync_state,
    u_path,
)
from .localization import MotEstimate, Pose5D, Pose6D, Tracker, orthogonalize, rotate_about, solve_mot
from .numerics import cross3
from .magnetics import DipoleSource, MagnetSpec, actuator_spec, capsule_spec, dipole_field_vec, dipole_force_vec, moment_magnitude
from .sensor_array import FieldSample, SensorGrid, SubArrayLayout, activate, select_subarray_center, synthesize


FORCE_MODELS = ("averaged", "instantaneous", "hybrid")


@dataclass(frozen=True)
class SimConfig:
    grid: SensorGrid = field(default_factory=SensorGrid)
    path: TubePath = field(default_factory=lambda: u_path(0.10, 0.018, start=(0.12, 0.15, 0.05)))
    control: act.ControlParams = field(default_factory=act.ControlParams)
    resistance: ResistanceModel = field(default_factory=ResistanceModel)
    actuator_magnet: MagnetSpec = field(default_factory=actuator_spec)
    capsule_magnet: MagnetSpec = field(default_factory=capsule_spec)
    sensor_rate: float = 50.0
    control_rate: float = 5.0
    physics_dt: float = 0.002
    seed: int = 0
    duration_max: float = 120.0
    mode: str = "adaptive"
    fixed_alpha: float = np.radians(15.0)
    buffer_len: int = 12
    theta_min: float = np.radians(30.0)
    init_pos_error: float = 0.01
    init_angle_error: float = np.radians(10.0)
    reversal_excursion: float = 1e-3
    force_model: str = "hybrid"
    n_theta: int = 32

    def __post_init__(self):
        if not (self.sensor_rate > 0 and self.control_rate > 0 and self.physics_dt > 0):
            raise ValueError("rates and physics_dt must be positive")
        if self.physics_dt > 1.0 / self.sensor_rate + 1e-12:
            raise ValueError("physics_dt must not exceed the sensor period")
        if not self.duration_max > 0:
            raise ValueError("duration_max must be positive")
        if self.force_model not in FORCE_MODELS:
            raise ValueError(f"force_model must be one of {FORCE_MODELS}")
        if self.mode not in ("adaptive", "fixed"):
            raise ValueError("mode must be 'adaptive' or 'fixed'")
        for name, period in (("sensor", 1.0 / self.sensor_rate), ("control", 1.0 / self.control_rate),
                             ("delta_t", self.control.delta_t)):
            ticks = period / self.physics_dt
            if abs(ticks - round(ticks)) > 1e-6:
                raise ValueError(f"{name} period must be a multiple of physics_dt")
        ratio = self.control.delta_t * self.sensor_rate
        if abs(ratio - round(ratio)) > 1e-6:
            raise ValueError("delta_t must be a multiple of the sensor period")

    @property
    def mags(self) -> tuple[float, float]:
        return moment_magnitude(self.actuator_magnet), moment_magnitude(self.capsule_magnet)


@dataclass
class EpisodeRecord:
    time: float
    s: float
    true_position: np.ndarray
    true_heading: np.ndarray
    true_moment: np.ndarray
    spin_phase: float
    synchronous: bool
    estimate: Pose6D
    command: act.ActuatorCommand
    f_p: float
    f_lateral: float
    f_levitation: float
    gamma: float
    v_sma: float
    alpha: float
    residual: float
    converged: bool
    velocity: float


@dataclass
class EpisodeOutcome:
    success: bool
    traversal_time: float
    mean_speed: float
    reversal_count: int
    segment_speeds: dict
    final_s: float
    path_length: float
    localization_failures: int = 0
    reversal_positions: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "traversal_time": self.traversal_time,
            "mean_speed": self.mean_speed,
            "reversal_count": self.reversal_count,
            "segment_speeds": self.segment_speeds,
            "final_s": self.final_s,
            "path_length": self.path_length,
            "localization_failures": self.localization_failures,
            "reversal_positions": list(self.reversal_positions),
        }


class _ReversalCounter:
    """Counts direction reversals whose excursion exceeds a hysteresis band."""

    def __init__(self, s0, band):
        self.band = band
        self.extreme = s0
        self.direction = 0
        self.count = 0
        self.positions = []

    def update(self, s):
        if self.direction == 0:
            if abs(s - self.extreme) > self.band:
                self.direction = 1 if s > self.extreme else -1
                self.extreme = s
            return
        if (s - self.extreme) * self.direction > 0:
            self.extreme = s
        elif abs(s - self.extreme) > self.band:
            self.positions.append(self.extreme)
            self.direction = -self.direction
            self.extreme = s
            self.count += 1


def _perturb(rng, position, direction, pos_err, ang_err):
    dp = rng.normal(size=3)
    dp *= pos_err / np.linalg.norm(dp)
    axis = cross3(direction, rng.normal(size=3))
    new_dir = rotate_about(direction, axis, ang_err)
    return np.asarray(position) + dp, new_dir


def run_episode(config: SimConfig, keep_records: bool = True):
    """Simulate one closed-loop traversal.

    Returns ``(EpisodeOutcome, records)``; one record per sensor update.
    """
    cfg = config
    path = cfg.path
    mags = cfg.mags
    ctrl = cfg.control
    dt = cfg.physics_dt
    sensor_every = int(round(1.0 / (cfg.sensor_rate * dt)))
    control_every = int(round(1.0 / (cfg.control_rate * dt)))
    window_every = int(round(ctrl.delta_t / dt))
    max_ticks = int(np.ceil(cfg.duration_max / dt))

    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    init_rng = np.random.default_rng(seeds[0])
    noise_rng = np.random.default_rng(seeds[1])

    def alpha_for(v):
        if cfg.mode == "fixed":
            return cfg.fixed_alpha
        return act.adaptive_alpha(v, ctrl)

    # ground truth at t = 0
    p0, tan0, _ = path.pose_at(0.0)
    est_p, est_h = _perturb(init_rng, p0, tan0, cfg.init_pos_error, cfg.init_angle_error)
    alpha0 = alpha_for(0.0)
    cmd = act.command_for(est_p, est_h, alpha0, ctrl.standoff, ctrl.spin_rate, 0.0, 0.0)
    b0 = dipole_field_vec(cmd.moment_dir(0.0), p0 - cmd.position)
    m_true = constrained_moment(b0, tan0)
    state = CapsuleState(0.0, 0.0, phase_of(tan0, m_true), True)

    tracker = Tracker(
        cfg.grid,
        mags,
        Pose6D(est_p, orthogonalize(m_true, est_h), est_h),
        Pose5D(cmd.position, cmd.moment_dir(0.0)),
        buffer_len=cfg.buffer_len,
        theta_min=cfg.theta_min,
        spin_rate=ctrl.spin_rate,
    )
    window = act.VelocityWindow(ctrl.delta_t)
    v_sma = 0.0
    records: list[EpisodeRecord] = []
    reversals = _ReversalCounter(0.0, cfg.reversal_excursion)
    seg_time = np.zeros(len(path.segments))
    seg_reach = np.zeros(len(path.segments))
    success = False
    t = 0.0
    tick = 0
    fp = fl = fz = 0.0
    gam = 0.0

    while tick <= max_ticks:
        t = tick * dt
        # physics: integrate (t - dt, t] with the force at the start of the interval
        pos, tan, kappa = path.pose_at(state.s)
        theta = cmd.phase_at(t)
        r = pos - cmd.position
        try:
            gam = act.command_gamma(cmd, pos, tan)
        except act.DegenerateGeometryError:
            gam = np.pi
        sync = sync_state(gam)
        if sync:
            b = dipole_field_vec(cmd.moment_dir(theta), r)
            m_true = constrained_moment(b, tan)
            phase = phase_of(tan, m_true)
        else:
            phase = state.spin_phase
            m_true = moment_from_phase(tan, phase)
        state = replace(state, synchronous=sync, spin_phase=phase)
        if cfg.force_model == "instantaneous" or (cfg.force_model == "hybrid" and not sync):
            force = dipole_force_vec(mags[0] * cmd.moment_dir(theta), mags[1] * m_true, r)
        elif sync:
            force = act.command_mean_force(cmd, pos, tan, mags, cfg.n_theta)
        else:
            # a frozen moment under a spinning actuator feels zero mean force
            force = np.zeros(3)
        frame = act.capsule_frame(pos, tan)
        fp, fl, fz = force @ frame.x_axis, force @ frame.y_axis, force @ frame.z_axis
        if tick > 0:
            k = path.segment_index(state.s)
            seg_time[k] += dt
            state = advance(state, fp, cfg.resistance, kappa, dt, path.total_length)
            k2 = path.segment_index(state.s)
            seg_reach[k2] = max(seg_reach[k2], state.s - path.segment_start(k2))
            for j in range(k2):
                seg_reach[j] = path.segments[j].length
            reversals.update(state.s)
            if state.s >= path.total_length:
                success = True
                break

        # sensor event
        if tick % sensor_every == 0:
            pos, tan, _ = path.pose_at(state.s)
            theta = cmd.phase_at(t)
            if state.synchronous:
                b = dipole_field_vec(cmd.moment_dir(theta), pos - cmd.position)
                m_true = constrained_moment(b, tan)
            else:
                m_true = moment_from_phase(tan, state.spin_phase)
            sources = [DipoleSource(cmd.position, cmd.moment_dir(theta), mags[0]), DipoleSource(pos, m_true, mags[1])]

            def measure(points, sources=sources):
                b = synthesize(points, sources, cfg.grid.noise_sigma, noise_rng)
                return [FieldSample(p, v) for p, v in zip(points, b)]

            try:
                rec = tracker.step(t, measure, Pose5D(cmd.position, cmd.moment_dir(theta)))
                residual, converged = rec.mot.residual_norm, rec.converged
            except (ValueError, FloatingPointError):
                residual, converged = np.inf, False
            if tick % window_every == 0:
                window.push(t, tracker.pose.position)
            if keep_records:
                records.append(EpisodeRecord(
                    t, state.s, pos.copy(), tan.copy(), m_true.copy(), state.spin_phase, state.synchronous,
                    tracker.pose, cmd, fp, fl, fz, gam, v_sma, cmd.actuating_angle, residual, converged, state.v,
                ))

        # control event
        if tick % control_every == 0 and tick > 0:
            v_sma = act.sma_velocity(window) if window.full else 0.0
            alpha = alpha_for(v_sma)
            est = tracker.pose
            try:
                cmd = act.command_for(est.position, est.heading, alpha, ctrl.standoff, ctrl.spin_rate,
                                      cmd.phase_at(t), t)
            except (act.DegenerateGeometryError, ValueError):
                pass  # keep the last valid command
        tick += 1

    traversal = t
    dist = state.s
    seg_speeds = {}
    for kind in ("straight", "bend"):
        idx = [k for k, sg in enumerate(path.segments) if sg.kind == kind]
        tt = sum(seg_time[k] for k in idx)
        if tt > 0:
            seg_speeds[kind] = float(sum(seg_reach[k] for k in idx) / tt)
        else:
            seg_speeds[kind] = float("nan")
    outcome = EpisodeOutcome(
        success=success,
        traversal_time=float(traversal),
        mean_speed=float(dist / traversal) if traversal > 0 else 0.0,
        reversal_count=reversals.count,
        segment_speeds=seg_speeds,
        final_s=float(dist),
        path_length=float(path.total_length),
        localization_failures=tracker.failures,
        reversal_positions=[float(x) for x in reversals.positions],
    )
    return outcome, records


# --- alpha sweep ----------------------------------------------------------------


def _trial_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _map(fn, jobs, workers):
    if workers is None or workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))  # map preserves submission order


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    trial: int
    straight_speed: float
    bend_speed: float
    success: bool


def _sweep_job(job):
    config, alpha, trial = job
    out, _ = run_episode(config, keep_records=False)
    return SweepRow(alpha, trial, out.segment_speeds["straight"], out.segment_speeds["bend"], out.success)


def sweep_alpha(config: SimConfig, alphas: Sequence[float], trials: int = 1, workers: int | None = None) -> list[SweepRow]:
    """One fixed-alpha episode per (alpha, trial); rows ordered alpha-major.

    Trial ``k`` runs with a seed derived from ``(config.seed, k)`` so results
    do not depend on ``workers``. With a single trial the config seed is used
    unchanged and the row matches :func:`run_episode`.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    kinds = {seg.kind for seg in config.path.segments}
    if not {"straight", "bend"} <= kinds:
        raise ValueError("sweep needs a path with straight and bend segments")
    jobs = []
    for a in alphas:
        for k in range(trials):
            seed = config.seed if trials == 1 else _trial_seed(config.seed, k)
            jobs.append((replace(config, mode="fixed", fixed_alpha=float(a), seed=seed), float(a), k))
    return _map(_sweep_job, jobs, workers)


# --- layout study ----------------------------------------------------------------


@dataclass(frozen=True)
class LayoutResult:
    layout_id: str
    sensor_count: int
    mean_pos_err: float
    std_pos_err: float
    mean_ori_err: float
    std_ori_err: float
    fail_rate: float
    mean_solve_time: float


@dataclass(frozen=True)
class StudySetup:
    """Sampling geometry shared by the offline localisation studies."""

    side: float = 0.12  # candidate-grid footprint (m)
    z_range: tuple = (0.05, 0.20)
    alpha: float = np.radians(15.0)
    standoff: float = 0.15
    init_pos_error: float = 0.01
    init_angle_error: float = np.radians(10.0)
    noise_rel: float = 0.0  # per-axis noise proportional to the local field
    actuator_magnet: MagnetSpec = field(default_factory=actuator_spec)
    capsule_magnet: MagnetSpec = field(default_factory=capsule_spec)

    @property
    def mags(self):
        return moment_magnitude(self.actuator_magnet), moment_magnitude(self.capsule_magnet)


def random_unit(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _sample_truth(rng, centre_xy, half, z_range, setup: StudySetup, heading=None):
    """Capsule pose inside the study box plus the matching actuator pose."""
    xy = np.asarray(centre_xy, dtype=float) + rng.uniform(-half, half, size=2)
    p_c = np.array([xy[0], xy[1], rng.uniform(*z_range)])
    if heading is None:
        while True:
            h = random_unit(rng)
            if abs(h[2]) < 0.99:  # the actuator frame needs a non-vertical heading
                break
    else:
        h = heading(rng)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    cmd = act.command_for(p_c, h, setup.alpha, setup.standoff)
    m_a = cmd.moment_dir(phase)
    m_c = constrained_moment(dipole_field_vec(m_a, p_c - cmd.position), h)
    return cmd.position, m_a, p_c, m_c


def _perturbed_init(rng, p_a, m_a, p_c, m_c, setup: StudySetup) -> MotEstimate:
    pa0, ma0 = _perturb(rng, p_a, m_a, setup.init_pos_error, setup.init_angle_error)
    pc0, mc0 = _perturb(rng, p_c, m_c, setup.init_pos_error, setup.init_angle_error)
    return MotEstimate(Pose5D(pa0, ma0), Pose5D(pc0, mc0))


def _noisy(points, sources, sigma, rel, rng):
    b = synthesize(points, sources, 0.0, None)
    scale = np.sqrt(sigma**2 + (rel * np.abs(b)) ** 2)
    return b + rng.normal(size=b.shape) * scale


def _angle_deg(u, v):
    return float(np.degrees(np.arccos(np.clip(np.dot(u, v), -1.0, 1.0))))


def _layout_trial(job):
    layouts, k, noise_sigma, seed, setup = job
    mags = setup.mags
    rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
    p_a, m_a, p_c, m_c = _sample_truth(rng, (0.0, 0.0), setup.side / 2.0, setup.z_range, setup)
    init = _perturbed_init(rng, p_a, m_a, p_c, m_c, setup)
    sources = [DipoleSource(p_a, m_a, mags[0]), DipoleSource(p_c, m_c, mags[1])]
    out = np.empty((len(layouts), 4))
    for j, lay in enumerate(layouts):
        noise_rng = np.random.default_rng(np.random.SeedSequence([seed, k, j + 1]))
        pts = lay.positions((0.0, 0.0), setup.side / (lay.grid_size - 1))
        b = _noisy(pts, sources, noise_sigma, setup.noise_rel, noise_rng)
        t0 = time.perf_counter()
        est = solve_mot([FieldSample(p, v) for p, v in zip(pts, b)], mags, init)
        dt = time.perf_counter() - t0
        out[j] = (
            np.linalg.norm(est.capsule.position - p_c),
            _angle_deg(est.capsule.moment_dir, m_c),
            float(est.converged),
            dt,
        )
    return out


def layout_trials(
    layouts: Sequence[SubArrayLayout],
    trials: int,
    noise_sigma: float,
    seed: int,
    setup: StudySetup | None = None,
    workers: int | None = None,
) -> np.ndarray:
    """Per-trial results, shape (trials, layouts, 4).

    Columns: position error (m), orientation error (deg), converged flag,
    solve time (s). Every layout sees the same capsule poses (trial ``k``
    draws from the stream seeded by ``(seed, k)``); the sensor noise of
    layout ``j`` comes from ``(seed, k, j + 1)``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    setup = setup or StudySetup()
    jobs = [(tuple(layouts), k, noise_sigma, seed, setup) for k in range(trials)]
    return np.array(_map(_layout_trial, jobs, workers))


def summarize_layouts(layouts: Sequence[SubArrayLayout], data: np.ndarray) -> list[LayoutResult]:
    rows = []
    for j, lay in enumerate(layouts):
        ok = data[:, j, 2] > 0.5
        pos = data[ok, j, 0]
        ori = data[ok, j, 1]
        nan = float("nan")
        rows.append(LayoutResult(
            lay.layout_id,
            lay.sensor_count,
            float(pos.mean()) if ok.any() else nan,
            float(pos.std()) if ok.any() else nan,
            float(ori.mean()) if ok.any() else nan,
            float(ori.std()) if ok.any() else nan,
            float(1.0 - ok.mean()),
            float(data[:, j, 3].mean()),
        ))
    return rows


def layout_study(
    layouts: Sequence[SubArrayLayout],
    trials: int,
    noise_sigma: float,
    seed: int,
    setup: StudySetup | None = None,
    workers: int | None = None,
) -> list[LayoutResult]:
    """Monte-Carlo localisation accuracy of each candidate layout.

    Errors are means over converged trials; ``fail_rate`` is the fraction
    that did not converge.
    """
    return summarize_layouts(layouts, layout_trials(layouts, trials, noise_sigma, seed, setup, workers))


# --- workspace height study --------------------------------------------------------


@dataclass(frozen=True)
class HeightResult:
    height: float
    mean_pos_err: float
    std_pos_err: float
    mean_ori_err: float
    fail_rate: float


def _height_trial(job):
    grid, height, k, noise_sigma, seed, setup = job
    mags = setup.mags
    rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
    ex, ey = grid.extent
    centre = np.asarray(grid.origin[:2]) + 0.5 * np.array([ex, ey])
    half = setup.side / 2.0

    def horizontal(r):
        phi = r.uniform(0.0, 2.0 * np.pi)
        return np.array([np.cos(phi), np.sin(phi), 0.0])

    z = grid.origin[2] + height
    p_a, m_a, p_c, m_c = _sample_truth(rng, centre, half, (z, z), setup, horizontal)
    init = _perturbed_init(rng, p_a, m_a, p_c, m_c, setup)
    active = activate(select_subarray_center(p_c[:2], grid), grid)
    sources = [DipoleSource(p_a, m_a, mags[0]), DipoleSource(p_c, m_c, mags[1])]
    noise_rng = np.random.default_rng(np.random.SeedSequence([seed, k, 1]))
    b = _noisy(active.positions, sources, noise_sigma, setup.noise_rel, noise_rng)
    est = solve_mot([FieldSample(p, v) for p, v in zip(active.positions, b)], mags, init)
    return (np.linalg.norm(est.capsule.position - p_c), _angle_deg(est.capsule.moment_dir, m_c), float(est.converged))


def height_study(
    heights: Sequence[float],
    trials: int,
    noise_sigma: float,
    seed: int,
    grid: SensorGrid | None = None,
    setup: StudySetup | None = None,
    workers: int | None = None,
) -> list[HeightResult]:
    """Localisation error of the runtime window versus capsule height.

    The capsule is placed in a square of side ``setup.side`` around the grid
    centre with a random horizontal heading; the actuator sits at its
    commanded pose. Every height reuses the same trial seeds.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    grid = grid or SensorGrid()
    setup = setup or StudySetup()
    out = []
    for h in heights:
        jobs = [(grid, float(h), k, noise_sigma, seed, setup) for k in range(trials)]
        data = np.array(_map(_height_trial, jobs, workers))
        ok = data[:, 2] > 0.5
        pos, ori = data[ok, 0], data[ok, 1]
        out.append(HeightResult(float(h), float(pos.mean()), float(pos.std()), float(ori.mean()), float(1.0 - ok.mean())))
    return out


# --- heading error versus speed ----------------------------------------------------


@dataclass(frozen=True)
class SpeedResult:
    speed: float
    mean_heading_err: float
    std_heading_err: float
    samples: int


def _speed_trial(job):
    grid, speed, radius, duration, noise_sigma, seed, k, ctrl, buffer_len, theta_min, mags = job
    rate = 50.0
    centre = np.asarray(grid.origin) + np.array([0.5 * grid.extent[0], 0.5 * grid.extent[1], 0.08])
    start = centre - np.array([0.0, radius, 0.0])
    sweep = max(speed * duration / radius, 1e-6)
    path = TubePath([Arc(radius, sweep)], start, (1.0, 0.0, 0.0))
    rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
    noise_rng = np.random.default_rng(np.random.SeedSequence([seed, k, 1]))

    p0, t0, _ = path.pose_at(0.0)
    cmd = act.command_for(p0, t0, ctrl.alpha_high, ctrl.standoff, ctrl.spin_rate, 0.0, 0.0)
    m0 = constrained_moment(dipole_field_vec(cmd.moment_dir(0.0), p0 - cmd.position), t0)
    est_p, est_h = _perturb(rng, p0, t0, 0.002, np.radians(2.0))
    tracker = Tracker(grid, mags, Pose6D(est_p, orthogonalize(m0, est_h), est_h), Pose5D(cmd.position, cmd.moment_dir(0.0)),
                      buffer_len=buffer_len, theta_min=theta_min, spin_rate=ctrl.spin_rate)
    errs = []
    n = int(round(duration * rate))
    for i in range(n + 1):
        t = i / rate
        p, tan, _ = path.pose_at(min(speed * t, path.total_length))
        # the actuator tracks the true pose (ideal arm) with continuous spin
        cmd = act.command_for(p, tan, ctrl.alpha_high, ctrl.standoff, ctrl.spin_rate, cmd.phase_at(t), t)
        m_a = cmd.moment_dir(cmd.phase_at(t))
        m_c = constrained_moment(dipole_field_vec(m_a, p - cmd.position), tan)
        sources = [DipoleSource(cmd.position, m_a, mags[0]), DipoleSource(p, m_c, mags[1])]

        def measure(points, sources=sources):
            b = synthesize(points, sources, noise_sigma, noise_rng)
            return [FieldSample(q, v) for q, v in zip(points, b)]

        tracker.step(t, measure, Pose5D(cmd.position, m_a))
        if i >= 2 * buffer_len:
            errs.append(_angle_deg(tracker.pose.heading, tan))
    return errs


def nvf_speed_study(
    speeds: Sequence[float],
    trials: int = 1,
    noise_sigma: float = 0.0,
    seed: int = 0,
    radius: float = 0.05,
    duration: float = 2.0,
    grid: SensorGrid | None = None,
    control: act.ControlParams | None = None,
    buffer_len: int = 12,
    theta_min: float = np.radians(30.0),
    magnets: tuple[MagnetSpec, MagnetSpec] | None = None,
    workers: int | None = None,
) -> list[SpeedResult]:
    """Tracker heading error for a capsule driven along an arc at fixed speeds.

    The capsule spins synchronously while the actuator follows the true pose,
    so the error reflects only the estimator: the moving-window fit lags the
    turning tangent more at higher speed.
    """
    grid = grid or SensorGrid()
    ctrl = control or act.ControlParams()
    specs = magnets or (actuator_spec(), capsule_spec())
    mags = (moment_magnitude(specs[0]), moment_magnitude(specs[1]))
    out = []
    for v in speeds:
        jobs = [(grid, float(v), radius, duration, noise_sigma, seed, k, ctrl, buffer_len, theta_min, mags)
                for k in range(trials)]
        errs = np.concatenate([np.asarray(e) for e in _map(_speed_trial, jobs, workers)])
        out.append(SpeedResult(float(v), float(errs.mean()), float(errs.std()), int(errs.size)))
    return out


# --- presets -----------------------------------------------------------------------


def u_path_config(**overrides) -> SimConfig:
    """The U-tube episode used for the failure-mode comparison.

    A 1 Hz actuator update (the arm, not the tracker, limits the control
    rate) and a 0.3 s velocity step, so the three-interval average spans
    most of one control period.
    """
    base = dict(
        control=act.ControlParams(delta_t=0.3),
        control_rate=1.0,
        duration_max=100.0,
        reversal_excursion=1e-3,
    )
    base.update(overrides)
    return SimConfig(**base)


# --- JSON config -----------------------------------------------------------------


class ConfigError(ValueError):
    """Invalid configuration document; the message names the offending field."""


_DEG_FIELDS = {"fixed_alpha": "fixed_alpha_deg", "theta_min": "theta_min_deg", "init_angle_error": "init_angle_error_deg"}
_CTRL_DEG = {"alpha_high": "alpha_high_deg", "alpha_low": "alpha_low_deg"}


def _magnet_to_dict(spec: MagnetSpec) -> dict:
    from .magnetics import Ring, Sphere

    if isinstance(spec.shape, Sphere):
        return {"shape": "sphere", "diameter": spec.shape.diameter, "remanence": spec.remanence}
    if isinstance(spec.shape, Ring):
        return {"shape": "ring", "outer_d": spec.shape.outer_d, "inner_d": spec.shape.inner_d,
                "length": spec.shape.length, "remanence": spec.remanence}
    raise TypeError(f"unsupported magnet shape {spec.shape!r}")


def _magnet_from_dict(d: dict, where: str) -> MagnetSpec:
    from .magnetics import Ring, Sphere

    _expect_keys(d, where, {"shape", "diameter", "outer_d", "inner_d", "length", "remanence"})
    shape = d.get("shape")
    try:
        if shape == "sphere":
            _expect_keys(d, where, {"shape", "diameter", "remanence"})
            return MagnetSpec(Sphere(float(d["diameter"])), float(d["remanence"]))
        if shape == "ring":
            _expect_keys(d, where, {"shape", "outer_d", "inner_d", "length", "remanence"})
            return MagnetSpec(Ring(float(d["outer_d"]), float(d["inner_d"]), float(d["length"])), float(d["remanence"]))
    except KeyError as exc:
        raise ConfigError(f"{where}: missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}.shape: expected 'sphere' or 'ring', got {shape!r}")


def _expect_keys(d, where, allowed):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(repr, unknown))}")


def config_to_dict(cfg: SimConfig) -> dict:
    """JSON-ready mirror of ``cfg``; angles are stored in degrees."""
    g = cfg.grid
    c = cfg.control
    out = {
        "grid": {"nx": g.nx, "ny": g.ny, "spacing": g.spacing, "origin": list(g.origin), "noise_sigma": g.noise_sigma},
        "path": cfg.path.to_dict(),
        "control": {
            "alpha_high_deg": float(np.degrees(c.alpha_high)),
            "alpha_low_deg": float(np.degrees(c.alpha_low)),
            "v_threshold": c.v_threshold,
            "delta_t": c.delta_t,
            "standoff": c.standoff,
            "spin_rate": c.spin_rate,
        },
        "resistance": {
            "static_threshold": cfg.resistance.static_threshold,
            "curvature_gain": cfg.resistance.curvature_gain,
            "viscous_coeff": cfg.resistance.viscous_coeff,
        },
        "magnets": {"actuator": _magnet_to_dict(cfg.actuator_magnet), "capsule": _magnet_to_dict(cfg.capsule_magnet)},
    }
    for name in ("sensor_rate", "control_rate", "physics_dt", "seed", "duration_max", "mode", "buffer_len",
                 "init_pos_error", "reversal_excursion", "force_model", "n_theta"):
        out[name] = getattr(cfg, name)
    for name, key in _DEG_FIELDS.items():
        out[key] = float(np.degrees(getattr(cfg, name)))
    return out


def config_from_dict(d: dict) -> SimConfig:
    """Build a :class:`SimConfig`; missing keys take the defaults, unknown keys are errors."""
    scalar = {"sensor_rate", "control_rate", "physics_dt", "seed", "duration_max", "mode", "buffer_len",
              "init_pos_error", "reversal_excursion", "force_model", "n_theta"}
    _expect_keys(d, "config", scalar | set(_DEG_FIELDS.values()) | {"grid", "path", "control", "resistance", "magnets"})
    kw = {}
    try:
        if "grid" in d:
            _expect_keys(d["grid"], "grid", {"nx", "ny", "spacing", "origin", "noise_sigma"})
            kw["grid"] = SensorGrid(**d["grid"])
        if "path" in d:
            try:
                kw["path"] = TubePath.from_dict(d["path"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"path: {exc}") from None
        if "control" in d:
            allowed = {"v_threshold", "delta_t", "standoff", "spin_rate"} | set(_CTRL_DEG.values())
            _expect_keys(d["control"], "control", allowed)
            ck = {k: v for k, v in d["control"].items() if not k.endswith("_deg")}
            for name, key in _CTRL_DEG.items():
                if key in d["control"]:
                    ck[name] = np.radians(float(d["control"][key]))
            kw["control"] = act.ControlParams(**ck)
        if "resistance" in d:
            _expect_keys(d["resistance"], "resistance", {"static_threshold", "curvature_gain", "viscous_coeff"})
            kw["resistance"] = ResistanceModel(**d["resistance"])
        if "magnets" in d:
            _expect_keys(d["magnets"], "magnets", {"actuator", "capsule"})
            if "actuator" in d["magnets"]:
                kw["actuator_magnet"] = _magnet_from_dict(d["magnets"]["actuator"], "magnets.actuator")
            if "capsule" in d["magnets"]:
                kw["capsule_magnet"] = _magnet_from_dict(d["magnets"]["capsule"], "magnets.capsule")
        for name in scalar:
            if name in d:
                kw[name] = d[name]
        for name, key in _DEG_FIELDS.items():
            if key in d:
                kw[name] = np.radians(float(d[key]))
        return SimConfig(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
