"""Planar rigid-body simulation: gravity, user force/torque, contacts.

State per body is q = [t, theta, v, omega] with t the center-of-mass position
in cm (world frame, +y down), theta the SO(2) angle in radians, v in cm/s and
omega in rad/s. Integration is semi-implicit Euler -- velocities first from
forces, then positions from the new velocities -- which is first-order and
the stable conventional choice for game-style stacks. Each step is split into
substeps; collisions are detected and resolved per substep with an iterative
sequential-impulse solver (accumulated impulses, Coulomb cone, restitution
captured at solver entry) plus a split position correction that removes a
fraction of the remaining penetration without injecting kinetic energy.

Angular quantities use the cross convention cross((x1,y1),(x2,y2)) =
x1*y2 - y1*x2; a positive omega rotates +x toward +y (clockwise on screen
with +y down).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import collision
from .collision import ContactPoint, Vec
from .errors import NonFinite, ValidationError
from .primitives import (
    MassProperties,
    Primitive,
    choose_primitive,
    mass_properties,
    scale_primitive,
)
from .scene import BoundarySegment, SceneBundle, SimConfig


# --------------------------------------------------------------------- types


@dataclass(slots=True)
class BodyState:
    """Immutable per-step snapshot; angles wrapped to (-pi, pi]."""

    translation: np.ndarray  # (2,) cm
    rotation: float
    linear_velocity: np.ndarray  # (2,) cm/s
    angular_velocity: float


@dataclass(slots=True)
class Body:
    """Mutable simulation body. Shape is stored in the local frame with the
    center of mass at the origin; ``pieces`` is empty for circles."""

    id: int
    kind: str  # "circle" | "polygon"
    radius: float
    pieces: list[list[Vec]]
    bound: float
    mass: float
    inertia: float
    inv_mass: float
    inv_inertia: float
    friction: float
    elasticity: float
    px: float = 0.0
    py: float = 0.0
    theta: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0

    def world_pieces(self) -> list[list[Vec]]:
        c = math.cos(self.theta)
        s = math.sin(self.theta)
        return [
            [(self.px + c * x - s * y, self.py + s * x + c * y) for x, y in piece]
            for piece in self.pieces
        ]


@dataclass(slots=True)
class World:
    bodies: list[Body]
    boundaries: list[BoundarySegment]  # endpoints in cm
    gravity: Vec
    dt: float
    substeps: int
    config: SimConfig

    def __post_init__(self):
        if not self.bodies:
            raise ValidationError("bodies", "world needs at least one body")
        if self.dt <= 0 or self.substeps < 1:
            raise ValidationError("dt", "dt and substeps must be positive")


@dataclass(slots=True)
class ExternalAction:
    """User force/torque on one body over a time window.

    ``point`` is in world pixels at the initial pose (it rides the body
    afterwards); None applies the force at the center of mass. The force
    vector stays world-fixed for the whole window.
    """

    body_id: int
    force: Vec | None = None
    torque: float = 0.0
    t_start: float = 0.0
    t_end: float = math.inf
    point: Vec | None = None

    def __post_init__(self):
        if self.t_end < self.t_start:
            raise ValidationError("window", "t_end must be >= t_start")


@dataclass(slots=True)
class ContactEvent:
    """Solver log entry. The tangent used for j_t is (-ny, nx)."""

    step: int
    a: str  # "body:<id>" or "boundary:<index>"
    b: str
    point: Vec
    normal: Vec  # from a to b
    j_n: float
    j_t: float


@dataclass(slots=True)
class Trajectory:
    body_ids: list[int]
    states: list[list[BodyState]]  # steps+1 entries
    contacts: list[ContactEvent] = field(default_factory=list)


@dataclass(slots=True)
class Derivative:
    velocity: Vec
    angular_velocity: float
    acceleration: Vec
    angular_acceleration: float


@dataclass(slots=True)
class Contact:
    """One contact constraint plus solver scratch state."""

    body_a: int | None  # None => static boundary is participant A
    boundary: int | None
    body_b: int
    point: Vec
    normal: Vec  # A -> B
    penetration: float
    friction: float = 0.0
    elasticity: float = 0.0
    # prepared by the solver:
    ra: Vec = (0.0, 0.0)
    rb: Vec = (0.0, 0.0)
    mass_n: float = 0.0
    mass_t: float = 0.0
    bias: float = 0.0
    j_n: float = 0.0
    j_t: float = 0.0


# --------------------------------------------------------------------- helpers


def _wrap_angle(theta: float) -> float:
    """Map to (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def _snapshot(world: World) -> list[BodyState]:
    return [
        BodyState(
            translation=np.array([b.px, b.py]),
            rotation=_wrap_angle(b.theta),
            linear_velocity=np.array([b.vx, b.vy]),
            angular_velocity=b.omega,
        )
        for b in world.bodies
    ]


def _mix_friction(a: float, b: float) -> float:
    return math.sqrt(a * b)


def _mix_elasticity(a: float, b: float) -> float:
    return min(a, b)


# --------------------------------------------------------------------- world build


def body_from_primitive(
    object_id: int,
    primitive: Primitive,
    props: MassProperties,
    friction: float,
    elasticity: float,
) -> Body:
    """Shift the primitive into the CoM frame and wrap it as a Body."""
    com = props.center_of_mass
    if primitive.kind == "circle":
        kind, radius = "circle", float(primitive.radius)
        pieces: list[list[Vec]] = []
        bound = radius
    else:
        kind, radius = "polygon", 0.0
        pieces = [
            [(float(x - com[0]), float(y - com[1])) for x, y in piece]
            for piece in primitive.pieces
        ]
        bound = collision.bounding_radius(pieces)
    return Body(
        id=object_id,
        kind=kind,
        radius=radius,
        pieces=pieces,
        bound=bound,
        mass=props.mass,
        inertia=props.inertia,
        inv_mass=1.0 / props.mass,
        inv_inertia=1.0 / props.inertia if props.inertia > 0 else 0.0,
        friction=friction,
        elasticity=elasticity,
        px=float(com[0]),
        py=float(com[1]),
    )


def build_world(
    bundle: SceneBundle, extra_actions: list[ExternalAction] | None = None
) -> tuple[World, list[ExternalAction], dict[int, Primitive]]:
    """Fit primitives, derive mass properties, and assemble the start state."""
    cfg = bundle.sim
    scale = 1.0 / cfg.pixels_per_cm  # px -> cm
    bodies: list[Body] = []
    primitives: dict[int, Primitive] = {}
    actions: list[ExternalAction] = []
    for obj in bundle.objects:
        prim_px = choose_primitive(obj.mask)
        primitives[obj.id] = prim_px
        prim_cm = scale_primitive(prim_px, scale) if scale != 1.0 else prim_px
        props = mass_properties(prim_cm, obj.mass)
        body = body_from_primitive(obj.id, prim_cm, props, obj.friction, obj.elasticity)
        body.vx, body.vy = obj.initial_velocity
        body.omega = obj.initial_angular_velocity
        bodies.append(body)
        if obj.applied_force is not None or obj.applied_torque is not None:
            duration = obj.force_duration if obj.force_duration > 0 else cfg.dt
            actions.append(
                ExternalAction(
                    body_id=obj.id,
                    force=obj.applied_force,
                    torque=obj.applied_torque or 0.0,
                    t_start=0.0,
                    t_end=duration,
                    point=obj.force_point,
                )
            )
    if extra_actions:
        actions.extend(extra_actions)

    boundaries = [
        BoundarySegment(
            p0=(b.p0[0] * scale, b.p0[1] * scale),
            p1=(b.p1[0] * scale, b.p1[1] * scale),
            orientation=b.orientation,
            friction=b.friction,
            elasticity=b.elasticity,
        )
        for b in bundle.boundaries
    ]
    world = World(
        bodies=bodies,
        boundaries=boundaries,
        gravity=(float(cfg.gravity[0]), float(cfg.gravity[1])),
        dt=cfg.dt,
        substeps=cfg.substeps,
        config=cfg,
    )
    return world, actions, primitives


# --------------------------------------------------------------------- dynamics


def state_derivative(
    world: World, actions: list[ExternalAction], time: float
) -> list[Derivative]:
    """d/dt q per body: gravity plus any action active at ``time``.

    Contact friction is impulse-based and enters through the solver, not here.
    """
    index = {b.id: i for i, b in enumerate(world.bodies)}
    ax = [world.gravity[0]] * len(world.bodies)
    ay = [world.gravity[1]] * len(world.bodies)
    alpha = [0.0] * len(world.bodies)
    scale = 1.0 / world.config.pixels_per_cm
    for action in actions:
        if action.body_id not in index:
            raise ValidationError("body_id", f"action targets unknown body {action.body_id}")
        if not (action.t_start <= time < action.t_end):
            continue
        i = index[action.body_id]
        body = world.bodies[i]
        alpha[i] += action.torque * body.inv_inertia
        if action.force is not None:
            fx, fy = action.force
            ax[i] += fx * body.inv_mass
            ay[i] += fy * body.inv_mass
            if action.point is not None:
                # the anchor is given at the initial pose; it rides the body
                lx = action.point[0] * scale - _initial_com(world, i)[0]
                ly = action.point[1] * scale - _initial_com(world, i)[1]
                c = math.cos(body.theta)
                s = math.sin(body.theta)
                rx = c * lx - s * ly
                ry = s * lx + c * ly
                alpha[i] += (rx * fy - ry * fx) * body.inv_inertia
    return [
        Derivative(
            velocity=(b.vx, b.vy),
            angular_velocity=b.omega,
            acceleration=(ax[i], ay[i]),
            angular_acceleration=alpha[i],
        )
        for i, b in enumerate(world.bodies)
    ]


def _initial_com(world: World, i: int) -> Vec:
    com = getattr(world, "_initial_coms", None)
    if com is None:
        com = [(b.px, b.py) for b in world.bodies]
        object.__setattr__(world, "_initial_coms", com)
    return com[i]


def detect_collisions(world: World) -> list[Contact]:
    """All body-body and body-boundary contacts at current positions."""
    contacts: list[Contact] = []
    bodies = world.bodies
    for i in range(len(bodies)):
        for j in range(i + 1, len(bodies)):
            a, b = bodies[i], bodies[j]
            dx = b.px - a.px
            dy = b.py - a.py
            reach = a.bound + b.bound
            if dx * dx + dy * dy > reach * reach:
                continue
            for cp in _narrow_bodies(a, b):
                contacts.append(
                    Contact(
                        body_a=i,
                        boundary=None,
                        body_b=j,
                        point=cp.point,
                        normal=cp.normal,
                        penetration=cp.penetration,
                        friction=_mix_friction(a.friction, b.friction),
                        elasticity=_mix_elasticity(a.elasticity, b.elasticity),
                    )
                )
    for i, body in enumerate(bodies):
        for k, seg in enumerate(world.boundaries):
            for cp in _narrow_boundary(body, seg):
                contacts.append(
                    Contact(
                        body_a=None,
                        boundary=k,
                        body_b=i,
                        point=cp.point,
                        normal=cp.normal,
                        penetration=cp.penetration,
                        friction=_mix_friction(body.friction, seg.friction),
                        elasticity=_mix_elasticity(body.elasticity, seg.elasticity),
                    )
                )
    return contacts


def _narrow_bodies(a: Body, b: Body) -> list[ContactPoint]:
    if a.kind == "circle" and b.kind == "circle":
        cp = collision.circle_circle((a.px, a.py), a.radius, (b.px, b.py), b.radius)
        return [cp] if cp else []
    if a.kind == "circle":
        cp = collision.circle_polygon((a.px, a.py), a.radius, b.world_pieces())
        if cp is None:
            return []
        # normal comes back polygon -> circle = b -> a; flip to a -> b
        return [ContactPoint(point=cp.point, normal=(-cp.normal[0], -cp.normal[1]), penetration=cp.penetration)]
    if b.kind == "circle":
        cp = collision.circle_polygon((b.px, b.py), b.radius, a.world_pieces())
        return [cp] if cp else []
    return collision.polygon_polygon(a.world_pieces(), b.world_pieces())


def _narrow_boundary(body: Body, seg: BoundarySegment) -> list[ContactPoint]:
    if body.kind == "circle":
        cp = collision.circle_segment((body.px, body.py), body.radius, seg.p0, seg.p1)
        return [cp] if cp else []
    return collision.polygon_segment(body.world_pieces(), seg.p0, seg.p1, (body.px, body.py))


# --------------------------------------------------------------------- solver


def _velocity_at(body: Body, r: Vec) -> Vec:
    return (body.vx - body.omega * r[1], body.vy + body.omega * r[0])


def _prepare_contacts(world: World, contacts: list[Contact]) -> None:
    threshold = world.config.restitution_threshold
    for c in contacts:
        b = world.bodies[c.body_b]
        a = world.bodies[c.body_a] if c.body_a is not None else None
        nx, ny = c.normal
        tx, ty = -ny, nx
        c.rb = (c.point[0] - b.px, c.point[1] - b.py)
        inv_mass = b.inv_mass
        rb_n = c.rb[0] * ny - c.rb[1] * nx
        rb_t = c.rb[0] * ty - c.rb[1] * tx
        k_n = inv_mass + rb_n * rb_n * b.inv_inertia
        k_t = inv_mass + rb_t * rb_t * b.inv_inertia
        if a is not None:
            c.ra = (c.point[0] - a.px, c.point[1] - a.py)
            ra_n = c.ra[0] * ny - c.ra[1] * nx
            ra_t = c.ra[0] * ty - c.ra[1] * tx
            k_n += a.inv_mass + ra_n * ra_n * a.inv_inertia
            k_t += a.inv_mass + ra_t * ra_t * a.inv_inertia
        c.mass_n = 1.0 / k_n if k_n > 0 else 0.0
        c.mass_t = 1.0 / k_t if k_t > 0 else 0.0

        vbx, vby = _velocity_at(b, c.rb)
        if a is not None:
            vax, vay = _velocity_at(a, c.ra)
        else:
            vax = vay = 0.0
        approach = -((vbx - vax) * nx + (vby - vay) * ny)
        c.bias = c.elasticity * approach if approach > threshold else 0.0
        c.j_n = 0.0
        c.j_t = 0.0


def _apply_impulse(world: World, c: Contact, jx: float, jy: float) -> None:
    b = world.bodies[c.body_b]
    b.vx += jx * b.inv_mass
    b.vy += jy * b.inv_mass
    b.omega += (c.rb[0] * jy - c.rb[1] * jx) * b.inv_inertia
    if c.body_a is not None:
        a = world.bodies[c.body_a]
        a.vx -= jx * a.inv_mass
        a.vy -= jy * a.inv_mass
        a.omega -= (c.ra[0] * jy - c.ra[1] * jx) * a.inv_inertia


def _solver_pass(world: World, contacts: list[Contact]) -> None:
    for c in contacts:
        b = world.bodies[c.body_b]
        a = world.bodies[c.body_a] if c.body_a is not None else None
        nx, ny = c.normal
        tx, ty = -ny, nx

        vbx, vby = _velocity_at(b, c.rb)
        if a is not None:
            vax, vay = _velocity_at(a, c.ra)
        else:
            vax = vay = 0.0
        rvx = vbx - vax
        rvy = vby - vay

        v_n = rvx * nx + rvy * ny
        d_jn = -(v_n - c.bias) * c.mass_n
        new_jn = c.j_n + d_jn
        if new_jn < 0.0:
            new_jn = 0.0
        d_jn = new_jn - c.j_n
        c.j_n = new_jn
        if d_jn != 0.0:
            _apply_impulse(world, c, d_jn * nx, d_jn * ny)

        vbx, vby = _velocity_at(b, c.rb)
        if a is not None:
            vax, vay = _velocity_at(a, c.ra)
        else:
            vax = vay = 0.0
        v_t = (vbx - vax) * tx + (vby - vay) * ty
        d_jt = -v_t * c.mass_t
        max_t = c.friction * c.j_n
        new_jt = min(max(c.j_t + d_jt, -max_t), max_t)
        d_jt = new_jt - c.j_t
        c.j_t = new_jt
        if d_jt != 0.0:
            _apply_impulse(world, c, d_jt * tx, d_jt * ty)


def solve_contacts(world: World, contacts: list[Contact]) -> None:
    """Sequential impulses with accumulation; run after forces are applied so
    restitution targets the post-force approach speed."""
    if not contacts:
        return
    _prepare_contacts(world, contacts)
    for _ in range(world.config.velocity_iterations):
        _solver_pass(world, contacts)


def resolve_collision(world: World, contact: Contact) -> tuple[float, float]:
    """Resolve a single contact to convergence; returns (j_n, j_t)."""
    solve_contacts(world, [contact])
    return contact.j_n, contact.j_t


def _apply_rolling_resistance(world: World, contacts: list[Contact], coeff: float) -> None:
    """Bleed spin from circle-boundary contacts: an angular impulse of
    magnitude c_r * j_n * r opposing omega, clamped so it cannot reverse it."""
    if coeff <= 0.0:
        return
    for c in contacts:
        if c.boundary is None or c.j_n <= 0.0:
            continue
        b = world.bodies[c.body_b]
        if b.kind != "circle" or b.omega == 0.0:
            continue
        d_omega = coeff * c.j_n * b.radius * b.inv_inertia
        if d_omega >= abs(b.omega):
            b.omega = 0.0
        else:
            b.omega -= math.copysign(d_omega, b.omega)


def _correct_positions(world: World) -> None:
    """Split positional correction: shift penetrating pairs apart by a
    fraction of the slop-adjusted depth. Velocities are untouched."""
    cfg = world.config
    slop = cfg.slop / cfg.pixels_per_cm
    beta = cfg.baumgarte
    if beta <= 0.0:
        return
    for c in detect_collisions(world):
        depth = c.penetration - slop
        if depth <= 0.0:
            continue
        b = world.bodies[c.body_b]
        a = world.bodies[c.body_a] if c.body_a is not None else None
        inv_sum = b.inv_mass + (a.inv_mass if a is not None else 0.0)
        if inv_sum <= 0.0:
            continue
        move = beta * depth / inv_sum
        nx, ny = c.normal
        b.px += nx * move * b.inv_mass
        b.py += ny * move * b.inv_mass
        if a is not None:
            a.px -= nx * move * a.inv_mass
            a.py -= ny * move * a.inv_mass


def integrate_step(
    world: World,
    actions: list[ExternalAction],
    time: float,
    *,
    step: int = 0,
    events: list[ContactEvent] | None = None,
) -> World:
    """Advance one dt: per substep, kick velocities, solve contacts, move."""
    h = world.dt / world.substeps
    roll = world.config.rolling_friction
    for s in range(world.substeps):
        t_sub = time + s * h
        contacts = detect_collisions(world)
        derivs = state_derivative(world, actions, t_sub)
        for body, d in zip(world.bodies, derivs):
            body.vx += d.acceleration[0] * h
            body.vy += d.acceleration[1] * h
            body.omega += d.angular_acceleration * h
        solve_contacts(world, contacts)
        _apply_rolling_resistance(world, contacts, roll)
        for body in world.bodies:
            body.px += body.vx * h
            body.py += body.vy * h
            body.theta += body.omega * h
        _correct_positions(world)
        for body in world.bodies:
            if not (
                math.isfinite(body.px)
                and math.isfinite(body.py)
                and math.isfinite(body.theta)
                and math.isfinite(body.vx)
                and math.isfinite(body.vy)
                and math.isfinite(body.omega)
            ):
                raise NonFinite(step)
        if events is not None:
            for c in contacts:
                if c.j_n == 0.0 and c.j_t == 0.0:
                    continue
                a_label = f"body:{world.bodies[c.body_a].id}" if c.body_a is not None else f"boundary:{c.boundary}"
                events.append(
                    ContactEvent(
                        step=step,
                        a=a_label,
                        b=f"body:{world.bodies[c.body_b].id}",
                        point=c.point,
                        normal=c.normal,
                        j_n=c.j_n,
                        j_t=c.j_t,
                    )
                )
    return world


def simulate(bundle: SceneBundle, extra_actions: list[ExternalAction] | None = None) -> Trajectory:
    """Run the bundle's configured number of steps; returns steps+1 states."""
    world, actions, _ = build_world(bundle, extra_actions)
    events: list[ContactEvent] = []
    states = [_snapshot(world)]
    for step in range(world.config.steps):
        integrate_step(world, actions, step * world.dt, step=step, events=events)
        states.append(_snapshot(world))
    return Trajectory(body_ids=[b.id for b in world.bodies], states=states, contacts=events)


# --------------------------------------------------------------------- sampling


def frame_indices(steps: int, n: int) -> np.ndarray:
    """n uniformly spaced step indices from 0 to steps inclusive."""
    if not 1 <= n <= steps + 1:
        raise ValidationError("num_frames", f"need 1 <= n <= {steps + 1}, got {n}")
    return np.round(np.linspace(0.0, float(steps), n)).astype(int)


def sample_frames(
    trajectory: Trajectory, n: int, *, pixels_per_cm: float = 1.0
) -> list[list[np.ndarray]]:
    """Per sampled frame, a 2x3 affine per body mapping initial-pose pixels
    to that frame (rotation about the body's center of mass)."""
    steps = len(trajectory.states) - 1
    indices = frame_indices(steps, n)
    initial = trajectory.states[0]
    out: list[list[np.ndarray]] = []
    for idx in indices:
        row: list[np.ndarray] = []
        for k in range(len(trajectory.body_ids)):
            st0 = initial[k]
            st = trajectory.states[idx][k]
            angle = st.rotation - st0.rotation
            c = math.cos(angle)
            s = math.sin(angle)
            c0 = st0.translation * pixels_per_cm
            ct = st.translation * pixels_per_cm
            tx = ct[0] - (c * c0[0] - s * c0[1])
            ty = ct[1] - (s * c0[0] + c * c0[1])
            row.append(np.array([[c, -s, tx], [s, c, ty]]))
        out.append(row)
    return out
