"""WebSocket bridge between the running simulator and browser clients.

Single asyncio event loop: one simulation task advances the executor in
wall-clock mode, per-client writer tasks drain bounded queues (drop-oldest
so a slow viewer never stalls the simulation), and client commands are
queued and applied only at tick boundaries.  Steering is exclusive: the
first client to send `set_obstacle_target` holds the lock until it sends
`release_steering` or disconnects.

Message protocol (JSON, documented field-by-field in the README):

ServerMessage, tagged by "tag":
  state_update: seq, t, telemetry {theta, theta_dot, u, phi, d,
                safety_active, plan_id, phase}, joints [[x,y]...],
                obstacle {position, velocity}, plan [[x,y]...] | null,
                predicted {points, radii} | null
  scene_config: seq, t, schema_version, arm {link_lengths, base_position,
                capsule_radius}, workspace {min, max}, targets {workpiece,
                target_box}, static_obstacles, rates {fast_dt}, d_min
  event:        seq, t, kind, detail

ClientCommand, tagged by "tag":
  set_obstacle_target {target: [x, y]}   (acquires the steering lock)
  release_steering | pause | resume | set_rate {factor} | reset {}
"""

from __future__ import annotations

import asyncio
import contextlib
import json

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import executor as ex
from . import sim as simmod
from .arm import forward_kinematics

QUEUE_SIZE = 64
DEFAULT_BROADCAST_HZ = 30.0


def _jlist(a) -> list:
    return np.asarray(a, dtype=float).tolist()


class Client:
    def __init__(self, ws: WebSocket):
        self.ws = ws
        self.queue: asyncio.Queue = asyncio.Queue(maxsize=QUEUE_SIZE)
        self.seq = 0

    def push(self, payload: dict):
        """Enqueue, dropping the oldest broadcast if the viewer is slow."""
        msg = dict(payload)
        self.seq += 1
        msg["seq"] = self.seq
        try:
            self.queue.put_nowait(msg)
        except asyncio.QueueFull:
            with contextlib.suppress(asyncio.QueueEmpty):
                self.queue.get_nowait()
            self.queue.put_nowait(msg)


class StreamService:
    def __init__(self, scenario: simmod.Scenario,
                 broadcast_hz: float = DEFAULT_BROADCAST_HZ,
                 time_scale: float = 1.0):
        self.scenario = scenario
        self.broadcast_hz = broadcast_hz
        self.time_scale = time_scale
        self.sim = simmod.Simulator(scenario)
        self.clients: list[Client] = []
        self.steering: Client | None = None
        self.commands: asyncio.Queue = asyncio.Queue()
        self.paused = False
        self.running = False
        self._decim = max(1, round(1.0 / (scenario.rates.fast_dt * broadcast_hz)))
        self._seen_events = 0
        half = scenario.arm.reach * 1.6
        base = scenario.arm.base_position
        self.workspace = (base - half, base + half)

    # -- outbound ------------------------------------------------------------

    def _broadcast(self, payload: dict):
        for c in self.clients:
            c.push(payload)

    def scene_config(self) -> dict:
        sc = self.scenario
        statics = (simmod.scenario_to_dict(sc).get("static_obstacles", [])
                   if sc.static_obstacles else [])
        return {
            "tag": "scene_config",
            "t": self.sim.t,
            "schema_version": simmod.SCHEMA_VERSION,
            "arm": {"link_lengths": _jlist(sc.arm.link_lengths),
                    "base_position": _jlist(sc.arm.base_position),
                    "capsule_radius": _jlist(sc.arm.capsule_radius)},
            "workspace": {"min": _jlist(self.workspace[0]),
                          "max": _jlist(self.workspace[1])},
            "targets": {"workpiece": _jlist(sc.task.workpiece),
                        "target_box": _jlist(sc.task.target_box)},
            "static_obstacles": statics,
            "rates": {"fast_dt": sc.rates.fast_dt},
            "d_min": sc.safety.d_min,
        }

    def state_update(self, rec: ex.TickRecord) -> dict:
        sim = self.sim
        joints = forward_kinematics(sim.sc.arm, sim.state.theta)
        plan = sim.executor.slot.read()
        plan_poly = None
        if plan is not None:
            plan_poly = [_jlist(forward_kinematics(sim.sc.arm, w)[-1])
                         for w in plan.trajectory.waypoints]
        pred = sim.executor.last_prediction
        predicted = None
        if pred is not None:
            predicted = {"points": [_jlist(p) for p in pred.samples],
                         "radii": _jlist(pred.radius_profile)}
        return {
            "tag": "state_update",
            "t": rec.t,
            "telemetry": {
                "theta": _jlist(sim.state.theta),
                "theta_dot": _jlist(sim.state.theta_dot),
                "u": _jlist(rec.u),
                "phi": float(rec.phi) if np.isfinite(rec.phi) else None,
                "d": float(rec.d),
                "safety_active": bool(rec.safety_active),
                "plan_id": int(rec.plan_id),
                "phase": rec.phase.value,
            },
            "joints": [_jlist(j) for j in joints],
            "obstacle": {"position": _jlist(sim.obstacle.position),
                         "velocity": _jlist(sim.obstacle.velocity)},
            "plan": plan_poly,
            "predicted": predicted,
        }

    def _emit_new_events(self):
        events = self.sim.executor.events
        for e in events[self._seen_events:]:
            self._broadcast({"tag": "event", "t": e.t, "kind": e.kind,
                             "detail": e.detail})
        self._seen_events = len(events)

    # -- inbound ------------------------------------------------------------

    def _apply_command(self, client: Client, cmd: dict):
        tag = cmd.get("tag")
        if tag == "set_obstacle_target":
            if self.steering is None:
                self.steering = client
                client.push({"tag": "event", "t": self.sim.t,
                             "kind": "steering_acquired", "detail": ""})
            if self.steering is not client:
                client.push({"tag": "event", "t": self.sim.t, "kind": "error",
                             "detail": "steering lock held by another client"})
                return
            target = np.asarray(cmd.get("target", ()), dtype=float).reshape(-1)
            lo, hi = self.workspace
            if target.shape != (2,) or np.any(target < lo) or np.any(target > hi):
                client.push({"tag": "event", "t": self.sim.t, "kind": "error",
                             "detail": "target outside workspace bounds"})
                return
            self.sim.set_external_target(target)
        elif tag == "release_steering":
            if self.steering is client:
                self.steering = None
                client.push({"tag": "event", "t": self.sim.t,
                             "kind": "steering_released", "detail": ""})
        elif tag == "pause":
            self.paused = True
        elif tag == "resume":
            self.paused = False
        elif tag == "set_rate":
            factor = float(cmd.get("factor", 1.0))
            if factor > 0:
                self.time_scale = factor
        elif tag == "reset":
            self.sim = simmod.Simulator(self.scenario)
            self._seen_events = 0
            self._broadcast(self.scene_config())
        else:
            client.push({"tag": "event", "t": self.sim.t, "kind": "error",
                         "detail": f"unknown command tag {tag!r}"})

    # -- tasks ----------------------------------------------------------------

    async def run(self):
        """Simulation task: applies queued commands, ticks, broadcasts."""
        self.running = True
        tick_count = 0
        try:
            while self.running:
                while not self.commands.empty():
                    client, cmd = self.commands.get_nowait()
                    try:
                        self._apply_command(client, cmd)
                    except Exception as exc:
                        client.push({"tag": "event", "t": self.sim.t,
                                     "kind": "error", "detail": str(exc)})
                if not self.paused:
                    rec = self.sim.tick()
                    tick_count += 1
                    self._emit_new_events()
                    if tick_count % self._decim == 0:
                        self._broadcast(self.state_update(rec))
                await asyncio.sleep(self.sim.sc.rates.fast_dt / self.time_scale)
        finally:
            self.running = False

    async def handle_socket(self, ws: WebSocket):
        await ws.accept()
        client = Client(ws)
        client.push(self.scene_config())
        self.clients.append(client)

        async def writer():
            while True:
                msg = await client.queue.get()
                await ws.send_text(json.dumps(msg))

        wtask = asyncio.create_task(writer())
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    cmd = json.loads(raw)
                    if not isinstance(cmd, dict):
                        raise ValueError("command must be an object")
                except ValueError as exc:
                    client.push({"tag": "event", "t": self.sim.t,
                                 "kind": "error", "detail": f"malformed command: {exc}"})
                    continue
                self.commands.put_nowait((client, cmd))
        except WebSocketDisconnect:
            pass
        finally:
            wtask.cancel()
            if client in self.clients:
                self.clients.remove(client)
            if self.steering is client:
                self.steering = None


def create_app(scenario: simmod.Scenario,
               broadcast_hz: float = DEFAULT_BROADCAST_HZ,
               time_scale: float = 1.0) -> FastAPI:
    service = StreamService(scenario, broadcast_hz, time_scale)

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        task = asyncio.create_task(service.run())
        yield
        service.running = False
        task.cancel()
        with contextlib.suppress(asyncio.CancelledError):
            await task

    app = FastAPI(lifespan=lifespan)
    app.state.service = service

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await service.handle_socket(ws)

    @app.get("/healthz")
    async def health():
        return {"ok": True, "t": service.sim.t,
                "clients": len(service.clients)}

    return app


def serve(scenario: simmod.Scenario, port: int = 8765,
          broadcast_hz: float = DEFAULT_BROADCAST_HZ):
    import uvicorn
    app = create_app(scenario, broadcast_hz)
    uvicorn.run(app, host="0.0.0.0", port=port, log_level="warning")
