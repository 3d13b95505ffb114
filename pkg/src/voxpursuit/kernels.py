"""Compiled hot-path kernels (voxel DDA raycasts, A*, visibility, step physics).

Everything here is numba-jitted and operates on flat occupancy arrays with
row-major x-fastest layout: flat = (z * ny + y) * nx + x. Positions are in
world meters; each kernel subtracts the grid origin itself. The grid boundary
is treated as occupied everywhere.

These functions are internal; the public contracts live in `world`, `planner`,
`perception`, `agents` and `engine`, which all delegate here so that the fast
path and the documented API share one implementation.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

BIG = 1e30


@njit(cache=True, inline="always")
def _wrap_pi(a):
    w = a % (2.0 * math.pi)
    if w > math.pi:
        w -= 2.0 * math.pi
    return w


@njit(cache=True)
def ray_distance(cells, nx, ny, nz, ox, oy, oz, px, py, pz, dx, dy, dz, max_range, voxel):
    """Distance to the entry face of the first occupied voxel (or grid boundary)
    along a unit ray, or -1.0 when free for the full max_range.

    Starting outside the grid or inside an occupied voxel returns 0.0.
    """
    x = px - ox
    y = py - oy
    z = pz - oz
    ix = int(math.floor(x / voxel))
    iy = int(math.floor(y / voxel))
    iz = int(math.floor(z / voxel))
    if ix < 0 or iy < 0 or iz < 0 or ix >= nx or iy >= ny or iz >= nz:
        return 0.0
    if cells[(iz * ny + iy) * nx + ix]:
        return 0.0
    if dx > 0.0:
        sx = 1
        tmx = ((ix + 1) * voxel - x) / dx
        tdx = voxel / dx
    elif dx < 0.0:
        sx = -1
        tmx = (ix * voxel - x) / dx
        tdx = -voxel / dx
    else:
        sx = 0
        tmx = BIG
        tdx = BIG
    if dy > 0.0:
        sy = 1
        tmy = ((iy + 1) * voxel - y) / dy
        tdy = voxel / dy
    elif dy < 0.0:
        sy = -1
        tmy = (iy * voxel - y) / dy
        tdy = -voxel / dy
    else:
        sy = 0
        tmy = BIG
        tdy = BIG
    if dz > 0.0:
        sz = 1
        tmz = ((iz + 1) * voxel - z) / dz
        tdz = voxel / dz
    elif dz < 0.0:
        sz = -1
        tmz = (iz * voxel - z) / dz
        tdz = -voxel / dz
    else:
        sz = 0
        tmz = BIG
        tdz = BIG
    while True:
        if tmx < tmy:
            if tmx < tmz:
                t = tmx
                ix += sx
                tmx += tdx
                oob = ix < 0 or ix >= nx
            else:
                t = tmz
                iz += sz
                tmz += tdz
                oob = iz < 0 or iz >= nz
        else:
            if tmy < tmz:
                t = tmy
                iy += sy
                tmy += tdy
                oob = iy < 0 or iy >= ny
            else:
                t = tmz
                iz += sz
                tmz += tdz
                oob = iz < 0 or iz >= nz
        if t > max_range:
            return -1.0
        if oob:
            return t
        if cells[(iz * ny + iy) * nx + ix]:
            return t


@njit(cache=True)
def los_clear_v(cells, nx, ny, nz, voxel, ox, oy, oz, ax, ay, az, bx, by, bz):
    """True when no occupied voxel is entered strictly before reaching b from a."""
    dx = bx - ax
    dy = by - ay
    dz = bz - az
    dist = math.sqrt(dx * dx + dy * dy + dz * dz)
    if dist < 1e-12:
        return True
    inv = 1.0 / dist
    hit = ray_distance(cells, nx, ny, nz, ox, oy, oz, ax, ay, az,
                       dx * inv, dy * inv, dz * inv, dist, voxel)
    return hit < 0.0 or hit >= dist - 1e-9


@njit(cache=True)
def update_visibility(cells, nx, ny, nz, voxel, ox, oy, oz, visited, src_flat, radius, count):
    """Mark free voxels whose centers are within `radius` of the source voxel
    center and line-of-sight reachable from it. Returns the updated count.

    Incremental: already-visited cells are skipped, so repeated calls from
    nearby sources only pay for the newly exposed crescent.
    """
    sx = src_flat % nx
    sy = (src_flat // nx) % ny
    sz = src_flat // (nx * ny)
    cxw = ox + (sx + 0.5) * voxel
    cyw = oy + (sy + 0.5) * voxel
    czw = oz + (sz + 0.5) * voxel
    if not visited[src_flat]:
        visited[src_flat] = 1
        count += 1
    r_vox = int(radius / voxel) + 1
    x0 = max(0, sx - r_vox)
    x1 = min(nx - 1, sx + r_vox)
    y0 = max(0, sy - r_vox)
    y1 = min(ny - 1, sy + r_vox)
    z0 = max(0, sz - r_vox)
    z1 = min(nz - 1, sz + r_vox)
    r2 = radius * radius
    for z in range(z0, z1 + 1):
        tzw = oz + (z + 0.5) * voxel
        dzw = tzw - czw
        for y in range(y0, y1 + 1):
            tyw = oy + (y + 0.5) * voxel
            dyw = tyw - cyw
            base = (z * ny + y) * nx
            for x in range(x0, x1 + 1):
                flat = base + x
                if visited[flat] or cells[flat]:
                    continue
                txw = ox + (x + 0.5) * voxel
                dxw = txw - cxw
                if dxw * dxw + dyw * dyw + dzw * dzw > r2:
                    continue
                if los_clear_v(cells, nx, ny, nz, voxel, ox, oy, oz,
                               cxw, cyw, czw, txw, tyw, tzw):
                    visited[flat] = 1
                    count += 1
    return count


@njit(cache=True)
def nearest_frontier(cells, visited, labels, nx, ny, nz, voxel, ox, oy, oz,
                     px, py, pz, qsx, qsy, agent_label):
    """Flat index of the nearest unvisited free voxel (same free component),
    preferring the caller's azimuthal quadrant, or -1 when fully explored.

    The quadrant is taken around the grid center: qsx/qsy are +-1 signs that
    the voxel center's (x, y) offset from the center must match.
    """
    cxw = ox + 0.5 * nx * voxel
    cyw = oy + 0.5 * ny * voxel
    best = -1
    best_d = BIG
    best_q = -1
    best_qd = BIG
    for z in range(nz):
        tz = oz + (z + 0.5) * voxel
        for y in range(ny):
            ty = oy + (y + 0.5) * voxel
            base = (z * ny + y) * nx
            for x in range(nx):
                flat = base + x
                if cells[flat] or visited[flat] or labels[flat] != agent_label:
                    continue
                tx = ox + (x + 0.5) * voxel
                ddx = tx - px
                ddy = ty - py
                ddz = tz - pz
                d = ddx * ddx + ddy * ddy + ddz * ddz
                if d < best_d:
                    best_d = d
                    best = flat
                if (tx - cxw) * qsx >= 0.0 and (ty - cyw) * qsy >= 0.0 and d < best_qd:
                    best_qd = d
                    best_q = flat
    if best_q >= 0:
        return best_q
    return best


@njit(cache=True)
def _heap_push(heap_f, heap_n, size, f, node):
    i = size
    heap_f[i] = f
    heap_n[i] = node
    while i > 0:
        p = (i - 1) >> 1
        if heap_f[p] < heap_f[i] or (heap_f[p] == heap_f[i] and heap_n[p] <= heap_n[i]):
            break
        heap_f[i], heap_f[p] = heap_f[p], heap_f[i]
        heap_n[i], heap_n[p] = heap_n[p], heap_n[i]
        i = p
    return size + 1


@njit(cache=True)
def _heap_pop(heap_f, heap_n, size):
    f = heap_f[0]
    node = heap_n[0]
    size -= 1
    heap_f[0] = heap_f[size]
    heap_n[0] = heap_n[size]
    i = 0
    while True:
        l = 2 * i + 1
        if l >= size:
            break
        r = l + 1
        c = l
        if r < size and (heap_f[r] < heap_f[l] or (heap_f[r] == heap_f[l] and heap_n[r] < heap_n[l])):
            c = r
        if heap_f[i] < heap_f[c] or (heap_f[i] == heap_f[c] and heap_n[i] <= heap_n[c]):
            break
        heap_f[i], heap_f[c] = heap_f[c], heap_f[i]
        heap_n[i], heap_n[c] = heap_n[c], heap_n[i]
        i = c
    return f, node, size


@njit(cache=True)
def astar_path(cells, nx, ny, nz, voxel, start, goal):
    """Cost-optimal 26-connected path between free voxels.

    Returns (path_flat, n_axis, n_face_diag, n_space_diag, max_expanded_f).
    path_flat is empty when the goal is unreachable. Ties on f are expanded
    lowest-flat-index first, which pins the returned path deterministically.
    """
    n = nx * ny * nz
    g = np.full(n, BIG, dtype=np.float64)
    parent = np.full(n, -1, dtype=np.int64)
    closed = np.zeros(n, dtype=np.uint8)
    cap = 4096
    heap_f = np.empty(cap, dtype=np.float64)
    heap_n = np.empty(cap, dtype=np.int64)
    size = 0

    gx = goal % nx
    gy = (goal // nx) % ny
    gz = goal // (nx * ny)

    sx = start % nx
    sy = (start // nx) % ny
    sz = start // (nx * ny)
    ddx = float(gx - sx)
    ddy = float(gy - sy)
    ddz = float(gz - sz)
    h0 = math.sqrt(ddx * ddx + ddy * ddy + ddz * ddz) * voxel
    g[start] = 0.0
    size = _heap_push(heap_f, heap_n, size, h0, start)
    max_expanded = -BIG
    found = False

    while size > 0:
        f, node, size = _heap_pop(heap_f, heap_n, size)
        if closed[node]:
            continue
        closed[node] = 1
        if f > max_expanded:
            max_expanded = f
        if node == goal:
            found = True
            break
        x = node % nx
        y = (node // nx) % ny
        z = node // (nx * ny)
        gn = g[node]
        for dz in range(-1, 2):
            zz = z + dz
            if zz < 0 or zz >= nz:
                continue
            for dy in range(-1, 2):
                yy = y + dy
                if yy < 0 or yy >= ny:
                    continue
                for dx in range(-1, 2):
                    if dx == 0 and dy == 0 and dz == 0:
                        continue
                    xx = x + dx
                    if xx < 0 or xx >= nx:
                        continue
                    nb = (zz * ny + yy) * nx + xx
                    if cells[nb] or closed[nb]:
                        continue
                    k = abs(dx) + abs(dy) + abs(dz)
                    if k == 1:
                        step = voxel
                    elif k == 2:
                        step = voxel * math.sqrt(2.0)
                    else:
                        step = voxel * math.sqrt(3.0)
                    ng = gn + step
                    if ng < g[nb]:
                        g[nb] = ng
                        parent[nb] = node
                        hx = float(gx - xx)
                        hy = float(gy - yy)
                        hz = float(gz - zz)
                        h = math.sqrt(hx * hx + hy * hy + hz * hz) * voxel
                        if size >= cap:
                            new_cap = cap * 2
                            nf = np.empty(new_cap, dtype=np.float64)
                            nn = np.empty(new_cap, dtype=np.int64)
                            nf[:cap] = heap_f
                            nn[:cap] = heap_n
                            heap_f = nf
                            heap_n = nn
                            cap = new_cap
                        size = _heap_push(heap_f, heap_n, size, ng + h, nb)

    if not found:
        return np.empty(0, dtype=np.int64), 0, 0, 0, max_expanded

    length = 1
    node = goal
    while node != start:
        node = parent[node]
        length += 1
    path = np.empty(length, dtype=np.int64)
    node = goal
    n1 = 0
    n2 = 0
    n3 = 0
    for i in range(length - 1, -1, -1):
        path[i] = node
        if node != start:
            p = parent[node]
            ax = node % nx
            ay = (node // nx) % ny
            az = node // (nx * ny)
            bx = p % nx
            by = (p // nx) % ny
            bz = p // (nx * ny)
            k = abs(ax - bx) + abs(ay - by) + abs(az - bz)
            if k == 1:
                n1 += 1
            elif k == 2:
                n2 += 1
            else:
                n3 += 1
            node = p
    return path, n1, n2, n3, max_expanded


@njit(cache=True)
def guidance_vector(cells, nx, ny, nz, voxel, ox, oy, oz, centers,
                    px, py, pz, lookahead, arrival_radius, out):
    """Unit vector toward the waypoint one lookahead of arc-length past the
    path vertex nearest to the agent; zero within arrival_radius of the final
    waypoint. Backs the target off toward the nearest forward waypoint while
    the first meter of the straight line is blocked."""
    n = centers.shape[0]
    fx = centers[n - 1, 0] - px
    fy = centers[n - 1, 1] - py
    fz = centers[n - 1, 2] - pz
    if fx * fx + fy * fy + fz * fz <= arrival_radius * arrival_radius:
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
        return
    nearest = 0
    best = BIG
    for j in range(n):
        dx = centers[j, 0] - px
        dy = centers[j, 1] - py
        dz = centers[j, 2] - pz
        d2 = dx * dx + dy * dy + dz * dz
        if d2 < best:
            best = d2
            nearest = j
    target = n - 1
    acc = 0.0
    for j in range(nearest, n - 1):
        sx = centers[j + 1, 0] - centers[j, 0]
        sy = centers[j + 1, 1] - centers[j, 1]
        sz = centers[j + 1, 2] - centers[j, 2]
        acc += math.sqrt(sx * sx + sy * sy + sz * sz)
        if acc >= lookahead:
            target = j + 1
            break
    first_forward = nearest + 1
    if first_forward > n - 1:
        first_forward = n - 1
    while target > first_forward:
        vx = centers[target, 0] - px
        vy = centers[target, 1] - py
        vz = centers[target, 2] - pz
        norm = math.sqrt(vx * vx + vy * vy + vz * vz)
        if norm < 1e-9:
            break
        inv = 1.0 / norm
        lim = 1.0 if norm > 1.0 else norm
        hit = ray_distance(cells, nx, ny, nz, ox, oy, oz, px, py, pz,
                           vx * inv, vy * inv, vz * inv, lim, voxel)
        if hit < 0.0:
            break
        target -= 1
    vx = centers[target, 0] - px
    vy = centers[target, 1] - py
    vz = centers[target, 2] - pz
    norm = math.sqrt(vx * vx + vy * vy + vz * vz)
    if norm < 1e-9:
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
    else:
        out[0] = vx / norm
        out[1] = vy / norm
        out[2] = vz / norm


# phys_params layout for step_physics
P_DT, P_CLEARANCE, P_LOOKAHEAD, P_TEAM_RADIUS, P_VX_MAX, P_VY_MAX, P_VZ_MAX, \
    P_YAW_CAP = range(8)

# event-mask bits returned by step_physics
MASK_SHIELD = 1
MASK_TEAM = 2
MASK_OBSTACLE = 4
MASK_EVADER_HIT = 8


@njit(cache=True)
def step_physics(cells, nx, ny, nz, voxel, ox, oy, oz,
                 cmd, pos, yaw, vbody, prev_vbody, yawrate, alive, is_pursuer,
                 phys, shield_flag, obstacle_flag, team_flag, impact_speed,
                 vworld, dist_out, voxflat_out):
    """Clamp commands, safety-filter, integrate and collision-check one step.

    Pursuer rows of cmd are clipped per axis and on yaw rate; the evader row
    is trusted (its policy already respects the speed cap). The shield
    raycasts along each agent's commanded world velocity over a lookahead
    window and rescales speed to stop `clearance` meters short of the first
    occupied voxel; when the obstacle is already inside the clearance band
    the filter has no braking authority left and does not intervene, so late
    turn-ins can still impact (and deactivate) an agent.

    Mutates pos/yaw/vbody/prev_vbody in place; vbody keeps the applied
    (possibly rescaled) command. Writes per-agent flags, impact speeds,
    pursuer-evader distances and flat voxel indices (-1 out of bounds).
    Returns an event bit mask, or -1 when a command contains NaN.
    """
    na = pos.shape[0]
    dt = phys[P_DT]
    clearance = phys[P_CLEARANCE]
    lookahead = phys[P_LOOKAHEAD]
    team_radius = phys[P_TEAM_RADIUS]
    mask = 0
    for i in range(na):
        shield_flag[i] = 0
        obstacle_flag[i] = 0
        team_flag[i] = 0
        impact_speed[i] = 0.0
        if not alive[i]:
            vworld[i, 0] = 0.0
            vworld[i, 1] = 0.0
            vworld[i, 2] = 0.0
            continue
        cx = cmd[i, 0]
        cy = cmd[i, 1]
        cz = cmd[i, 2]
        cr = cmd[i, 3]
        if math.isnan(cx) or math.isnan(cy) or math.isnan(cz) or math.isnan(cr):
            return -1
        if is_pursuer[i]:
            if cx > phys[P_VX_MAX]:
                cx = phys[P_VX_MAX]
            elif cx < -phys[P_VX_MAX]:
                cx = -phys[P_VX_MAX]
            if cy > phys[P_VY_MAX]:
                cy = phys[P_VY_MAX]
            elif cy < -phys[P_VY_MAX]:
                cy = -phys[P_VY_MAX]
            if cz > phys[P_VZ_MAX]:
                cz = phys[P_VZ_MAX]
            elif cz < -phys[P_VZ_MAX]:
                cz = -phys[P_VZ_MAX]
            if cr > phys[P_YAW_CAP]:
                cr = phys[P_YAW_CAP]
            elif cr < -phys[P_YAW_CAP]:
                cr = -phys[P_YAW_CAP]
        prev_vbody[i, 0] = vbody[i, 0]
        prev_vbody[i, 1] = vbody[i, 1]
        prev_vbody[i, 2] = vbody[i, 2]
        vbody[i, 0] = cx
        vbody[i, 1] = cy
        vbody[i, 2] = cz
        yawrate[i] = cr
        c = math.cos(yaw[i])
        s = math.sin(yaw[i])
        vx = c * cx - s * cy
        vy = s * cx + c * cy
        vz = cz
        speed = math.sqrt(vx * vx + vy * vy + vz * vz)
        if speed > 1e-12:
            horizon = speed * dt * lookahead
            inv = 1.0 / speed
            hit = ray_distance(cells, nx, ny, nz, ox, oy, oz,
                               pos[i, 0], pos[i, 1], pos[i, 2],
                               vx * inv, vy * inv, vz * inv,
                               horizon + clearance, voxel)
            if hit >= clearance:
                scale = (hit - clearance) / horizon
                if scale < 1.0:
                    vx *= scale
                    vy *= scale
                    vz *= scale
                    vbody[i, 0] *= scale
                    vbody[i, 1] *= scale
                    vbody[i, 2] *= scale
                    shield_flag[i] = 1
                    mask |= MASK_SHIELD
            # 0 <= hit < clearance: too late to guarantee clearance; no action.
        pos[i, 0] += dt * vx
        pos[i, 1] += dt * vy
        pos[i, 2] += dt * vz
        yaw[i] = _wrap_pi(yaw[i] + dt * yawrate[i])
        vworld[i, 0] = vx
        vworld[i, 1] = vy
        vworld[i, 2] = vz
        ix = int(math.floor((pos[i, 0] - ox) / voxel))
        iy = int(math.floor((pos[i, 1] - oy) / voxel))
        iz = int(math.floor((pos[i, 2] - oz) / voxel))
        if ix < 0 or iy < 0 or iz < 0 or ix >= nx or iy >= ny or iz >= nz:
            voxflat_out[i] = -1
            hit_cell = True
        else:
            voxflat_out[i] = (iz * ny + iy) * nx + ix
            hit_cell = cells[voxflat_out[i]] != 0
        if hit_cell:
            obstacle_flag[i] = 1
            mask |= MASK_EVADER_HIT if not is_pursuer[i] else MASK_OBSTACLE
            sp = math.sqrt(vx * vx + vy * vy + vz * vz)
            if sp > impact_speed[i]:
                impact_speed[i] = sp
    # Inter-agent contact among alive pursuers, on post-integration positions.
    for i in range(na):
        if not (alive[i] and is_pursuer[i]):
            continue
        for j in range(i + 1, na):
            if not (alive[j] and is_pursuer[j]):
                continue
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            dz = pos[i, 2] - pos[j, 2]
            if dx * dx + dy * dy + dz * dz <= team_radius * team_radius:
                team_flag[i] = 1
                team_flag[j] = 1
                mask |= MASK_TEAM
                rvx = vworld[i, 0] - vworld[j, 0]
                rvy = vworld[i, 1] - vworld[j, 1]
                rvz = vworld[i, 2] - vworld[j, 2]
                rs = math.sqrt(rvx * rvx + rvy * rvy + rvz * rvz)
                if rs > impact_speed[i]:
                    impact_speed[i] = rs
                if rs > impact_speed[j]:
                    impact_speed[j] = rs
    ex = pos[na - 1, 0]
    ey = pos[na - 1, 1]
    ez = pos[na - 1, 2]
    for i in range(na - 1):
        dx = pos[i, 0] - ex
        dy = pos[i, 1] - ey
        dz = pos[i, 2] - ez
        dist_out[i] = math.sqrt(dx * dx + dy * dy + dz * dz)
    return mask


# reward_params layout for step_rewards
R_W_CLOSURE, R_W_CAPTURE, R_W_QUALITY, R_W_COLLISION, R_W_IMPACT, R_W_LAZY, \
    R_ALPHA_P, R_ALPHA_V, R_ALPHA_R, R_PROX_SCALE, R_EPS, R_GATE_INNER, \
    R_GATE_OUTER, R_HARD_GATE, R_PART_CLOSING, R_PART_FRAC, R_CAPTURE_RADIUS, \
    R_DT, R_IMPACT_NORM = range(19)


@njit(cache=True)
def step_rewards(acting, dist, dist_prev, pos, captured,
                 obstacle_flag, team_flag, shield_flag, impact_speed,
                 rp, terms):
    """Per-pursuer reward terms for one step, written into terms (4, 8) as
    [closure, capture, quality, collision, impact, lazy, rho, share].

    Mirrors the reference implementation in rewards.py exactly; a parity test
    keeps the two in lockstep.
    """
    n_p = terms.shape[0]
    for i in range(n_p):
        for k in range(8):
            terms[i, k] = 0.0
    n = 0
    for i in range(n_p):
        if acting[i]:
            n += 1
    if n == 0:
        return
    dt = rp[R_DT]
    rho = 0.0
    total_raw = 0.0
    raw = np.zeros(n_p)
    q_each = 0.0
    n_within = 0
    if captured:
        active = 0
        for i in range(n_p):
            if not acting[i]:
                continue
            d = dist[i]
            v = (dist_prev[i] - d) / dt
            if d <= rp[R_HARD_GATE]:
                n_within += 1
                c = rp[R_ALPHA_P] * math.exp(-d / rp[R_PROX_SCALE])
                if v > 0.0:
                    c += rp[R_ALPHA_V] * v
                if d <= rp[R_CAPTURE_RADIUS]:
                    c += rp[R_ALPHA_R]
                raw[i] = c
                total_raw += c
                if v > rp[R_PART_CLOSING]:
                    active += 1
        rho = active / (rp[R_PART_FRAC] * n)
        if rho > 1.0:
            rho = 1.0
        if n_within > 0:
            az = np.empty(n_within, dtype=np.float64)
            m = 0
            ex = pos[n_p, 0]
            ey = pos[n_p, 1]
            for i in range(n_p):
                if acting[i] and dist[i] <= rp[R_HARD_GATE]:
                    az[m] = math.atan2(pos[i, 1] - ey, pos[i, 0] - ex)
                    m += 1
            for a in range(1, n_within):
                v = az[a]
                b = a - 1
                while b >= 0 and az[b] > v:
                    az[b + 1] = az[b]
                    b -= 1
                az[b + 1] = v
            gap = 2.0 * math.pi - (az[n_within - 1] - az[0])
            for a in range(1, n_within):
                g = az[a] - az[a - 1]
                if g > gap:
                    gap = g
            q_each = ((2.0 * math.pi - gap) / (2.0 * math.pi)) / n_within
    for i in range(n_p):
        if not acting[i]:
            continue
        d = dist[i]
        delta = dist_prev[i] - d
        v = delta / dt
        if d <= rp[R_GATE_INNER]:
            gate = 1.0
        elif d <= rp[R_GATE_OUTER]:
            gate = (rp[R_GATE_OUTER] - d) / (rp[R_GATE_OUTER] - rp[R_GATE_INNER])
        else:
            gate = 0.0
        terms[i, 0] = rp[R_W_CLOSURE] * gate * delta
        if captured:
            share = raw[i] / (total_raw + rp[R_EPS])
            terms[i, 1] = rp[R_W_CAPTURE] * rho * share
            if d <= rp[R_HARD_GATE]:
                terms[i, 2] = rp[R_W_QUALITY] * q_each
            terms[i, 7] = share
        ncol = 0
        if obstacle_flag[i]:
            ncol += 1
        if team_flag[i]:
            ncol += 1
        if shield_flag[i]:
            ncol += 1
        terms[i, 3] = rp[R_W_COLLISION] * ncol
        if obstacle_flag[i] or team_flag[i]:
            kappa = impact_speed[i] / rp[R_IMPACT_NORM]
            if kappa > 1.0:
                kappa = 1.0
            terms[i, 4] = rp[R_W_IMPACT] * kappa
        if d > rp[R_GATE_OUTER] and v <= 0.0:
            terms[i, 5] = rp[R_W_LAZY]
        terms[i, 6] = rho


# obs_params layout for fill_observations
O_LIDAR_RANGE, O_VIS_RANGE, O_VX_MAX, O_VY_MAX, O_VZ_MAX, O_REL_VEL_NORM, \
    O_ACC_NORM, O_RATE_NORM, O_SLOT_RADIUS, O_Z_EXTENT, O_DELAY_NORM, O_DT, \
    O_DECAY_STEPS = range(13)


@njit(cache=True)
def fill_observations(cells, nx, ny, nz, voxel, ox, oy, oz, dirs_body,
                      pos, yaw, vbody, prev_vbody, yawrate, alive,
                      guidance, est_pos, est_vel, est_age,
                      gate_open, op, obs, dist_out, vis_out):
    """Assemble the 83-channel observation rows for the four pursuers.

    Rows of dead pursuers are zeroed. dist_out receives true pursuer-evader
    distances; vis_out the per-agent current-visibility flags (gate AND range
    AND line of sight). The per-agent target estimate arrays are updated in
    place: refreshed on sight, aged otherwise, and considered valid while the
    age stays within the decay window. Slot and encirclement channels read
    the updated estimate. op packs the normalizer constants (layout above).
    """
    lidar_range = op[O_LIDAR_RANGE]
    vis_range = op[O_VIS_RANGE]
    vx_max = op[O_VX_MAX]
    vy_max = op[O_VY_MAX]
    vz_max = op[O_VZ_MAX]
    rel_vel_norm = op[O_REL_VEL_NORM]
    acc_norm = op[O_ACC_NORM]
    rate_norm = op[O_RATE_NORM]
    slot_radius = op[O_SLOT_RADIUS]
    z_extent = op[O_Z_EXTENT]
    delay_norm = op[O_DELAY_NORM]
    dt = op[O_DT]
    decay_steps = op[O_DECAY_STEPS]
    n_p = obs.shape[0]
    ex = pos[n_p, 0]
    ey = pos[n_p, 1]
    ez = pos[n_p, 2]
    ce = math.cos(yaw[n_p])
    se = math.sin(yaw[n_p])
    evx = ce * vbody[n_p, 0] - se * vbody[n_p, 1]
    evy = se * vbody[n_p, 0] + ce * vbody[n_p, 1]
    evz = vbody[n_p, 2]
    for i in range(n_p):
        for k in range(83):
            obs[i, k] = 0.0
        dxe = ex - pos[i, 0]
        dye = ey - pos[i, 1]
        dze = ez - pos[i, 2]
        d = math.sqrt(dxe * dxe + dye * dye + dze * dze)
        dist_out[i] = d
        vis_out[i] = 0
        if not alive[i]:
            continue
        c = math.cos(yaw[i])
        s = math.sin(yaw[i])
        # [0:26] body-frame range scan, 1.0 = clear for the full range
        for k in range(26):
            bx = dirs_body[k, 0]
            by = dirs_body[k, 1]
            bz = dirs_body[k, 2]
            wx = c * bx - s * by
            wy = s * bx + c * by
            hit = ray_distance(cells, nx, ny, nz, ox, oy, oz,
                               pos[i, 0], pos[i, 1], pos[i, 2],
                               wx, wy, bz, lidar_range, voxel)
            obs[i, k] = 1.0 if hit < 0.0 else hit / lidar_range
        # evader visibility: gate open, within range, line of sight
        if gate_open and d <= vis_range:
            if los_clear_v(cells, nx, ny, nz, voxel, ox, oy, oz,
                           pos[i, 0], pos[i, 1], pos[i, 2], ex, ey, ez):
                vis_out[i] = 1
        vix = c * vbody[i, 0] - s * vbody[i, 1]
        viy = s * vbody[i, 0] + c * vbody[i, 1]
        viz = vbody[i, 2]
        if vis_out[i]:
            est_pos[i, 0] = ex
            est_pos[i, 1] = ey
            est_pos[i, 2] = ez
            est_vel[i, 0] = evx
            est_vel[i, 1] = evy
            est_vel[i, 2] = evz
            est_age[i] = 0
        elif est_age[i] < 10 ** 12:
            est_age[i] += 1
        if vis_out[i]:
            obs[i, 26] = dxe / vis_range
            obs[i, 27] = dye / vis_range
            obs[i, 28] = dze / vis_range
            obs[i, 29] = (evx - vix) / rel_vel_norm
            obs[i, 30] = (evy - viy) / rel_vel_norm
            obs[i, 31] = (evz - viz) / rel_vel_norm
        # self kinematics
        obs[i, 32] = vbody[i, 0] / vx_max
        obs[i, 33] = vbody[i, 1] / vy_max
        obs[i, 34] = vbody[i, 2] / vz_max
        obs[i, 35] = (vbody[i, 0] - prev_vbody[i, 0]) / dt / acc_norm
        obs[i, 36] = (vbody[i, 1] - prev_vbody[i, 1]) / dt / acc_norm
        obs[i, 37] = (vbody[i, 2] - prev_vbody[i, 2]) / dt / acc_norm
        obs[i, 38] = 0.0
        obs[i, 39] = 0.0
        obs[i, 40] = yawrate[i] / rate_norm
        # [41:65] teammates nearest-first, 8 channels each, dead/missing zeroed
        tm_idx = np.empty(3, dtype=np.int64)
        tm_d = np.empty(3, dtype=np.float64)
        m = 0
        for j in range(n_p):
            if j == i or not alive[j]:
                continue
            ddx = pos[j, 0] - pos[i, 0]
            ddy = pos[j, 1] - pos[i, 1]
            ddz = pos[j, 2] - pos[i, 2]
            dj = math.sqrt(ddx * ddx + ddy * ddy + ddz * ddz)
            k = m
            while k > 0 and (tm_d[k - 1] > dj):
                if k < 3:
                    tm_d[k] = tm_d[k - 1]
                    tm_idx[k] = tm_idx[k - 1]
                k -= 1
            if k < 3:
                tm_d[k] = dj
                tm_idx[k] = j
            if m < 3:
                m += 1
        for slot in range(m):
            j = tm_idx[slot]
            base = 41 + 8 * slot
            cj = math.cos(yaw[j])
            sj = math.sin(yaw[j])
            vjx = cj * vbody[j, 0] - sj * vbody[j, 1]
            vjy = sj * vbody[j, 0] + cj * vbody[j, 1]
            vjz = vbody[j, 2]
            obs[i, base + 0] = (pos[j, 0] - pos[i, 0]) / vis_range
            obs[i, base + 1] = (pos[j, 1] - pos[i, 1]) / vis_range
            obs[i, base + 2] = (pos[j, 2] - pos[i, 2]) / vis_range
            obs[i, base + 3] = (vjx - vix) / rel_vel_norm
            obs[i, base + 4] = (vjy - viy) / rel_vel_norm
            obs[i, base + 5] = (vjz - viz) / rel_vel_norm
            obs[i, base + 6] = tm_d[slot] / vis_range
            obs[i, base + 7] = 1.0
        # [65:68] guidance, [68:72] id one-hot, [72] mode, [73] delay
        obs[i, 65] = guidance[i, 0]
        obs[i, 66] = guidance[i, 1]
        obs[i, 67] = guidance[i, 2]
        obs[i, 68 + i] = 1.0
        obs[i, 72] = 1.0 if vis_out[i] else 0.0
        obs[i, 73] = delay_norm
        # [74:81] tactical slot, [81:83] encirclement; need a target estimate
        if est_age[i] <= decay_steps:
            tx = est_pos[i, 0]
            ty = est_pos[i, 1]
            tz = est_pos[i, 2]
            obs[i, 74 + i] = 1.0
            dex = pos[i, 0] - tx
            dey = pos[i, 1] - ty
            dez = pos[i, 2] - tz
            de = math.sqrt(dex * dex + dey * dey + dez * dez)
            az = math.atan2(dey, dex)
            slot_bearing = 0.25 * math.pi + 0.5 * math.pi * i
            berr = abs(_wrap_pi(az - slot_bearing))
            obs[i, 78] = berr / math.pi
            obs[i, 79] = (de - slot_radius) / vis_range
            if berr <= math.pi / 6.0 and abs(de - slot_radius) <= 10.0:
                obs[i, 80] = 1.0
            # encirclement over alive pursuers within vis_range of the estimate
            azs = np.empty(n_p, dtype=np.float64)
            zmin = BIG
            zmax = -BIG
            cnt = 0
            for j in range(n_p):
                if not alive[j]:
                    continue
                djx = pos[j, 0] - tx
                djy = pos[j, 1] - ty
                djz = pos[j, 2] - tz
                if math.sqrt(djx * djx + djy * djy + djz * djz) <= vis_range:
                    azs[cnt] = math.atan2(djy, djx)
                    cnt += 1
                    if pos[j, 2] < zmin:
                        zmin = pos[j, 2]
                    if pos[j, 2] > zmax:
                        zmax = pos[j, 2]
            if cnt >= 2:
                # insertion sort then largest circular gap
                for a in range(1, cnt):
                    v = azs[a]
                    b = a - 1
                    while b >= 0 and azs[b] > v:
                        azs[b + 1] = azs[b]
                        b -= 1
                    azs[b + 1] = v
                gap = 2.0 * math.pi - (azs[cnt - 1] - azs[0])
                for a in range(1, cnt):
                    gg = azs[a] - azs[a - 1]
                    if gg > gap:
                        gap = gg
                obs[i, 81] = (2.0 * math.pi - gap) / (2.0 * math.pi)
                obs[i, 82] = (zmax - zmin) / z_extent
            elif cnt == 1:
                obs[i, 81] = 0.0
                obs[i, 82] = 0.0


@njit(cache=True)
def evader_command(cells, nx, ny, nz, voxel, ox, oy, oz,
                   epos, eyaw, ppos, palive, any_pursuer,
                   ray_dirs, probe_range,
                   speed_cap, yaw_cap, repulse_range, obstacle_range,
                   w_pursuer, w_obstacle, w_corridor, dt, out_cmd):
    """Potential-field escape command for the evader, in its body frame.

    Sums inverse-square repulsion from pursuers inside repulse_range, short
    range obstacle repulsion from a fixed probe fan, and a corridor bias
    toward the most open probe direction; the result is flown at speed_cap.
    """
    fx = 0.0
    fy = 0.0
    fz = 0.0
    if any_pursuer:
        for i in range(ppos.shape[0]):
            if not palive[i]:
                continue
            dx = epos[0] - ppos[i, 0]
            dy = epos[1] - ppos[i, 1]
            dz = epos[2] - ppos[i, 2]
            d = math.sqrt(dx * dx + dy * dy + dz * dz)
            if d < 1e-9 or d > repulse_range:
                continue
            w = w_pursuer / (d * d * d)
            fx += dx * w
            fy += dy * w
            fz += dz * w
    n_rays = ray_dirs.shape[0]
    best_open = -1.0
    best_k = 0
    for k in range(n_rays):
        hit = ray_distance(cells, nx, ny, nz, ox, oy, oz,
                           epos[0], epos[1], epos[2],
                           ray_dirs[k, 0], ray_dirs[k, 1], ray_dirs[k, 2],
                           probe_range, voxel)
        open_d = probe_range if hit < 0.0 else hit
        if open_d > best_open:
            best_open = open_d
            best_k = k
        if 0.0 <= hit < obstacle_range:
            w = w_obstacle * (1.0 - hit / obstacle_range) ** 2
            fx -= ray_dirs[k, 0] * w
            fy -= ray_dirs[k, 1] * w
            fz -= ray_dirs[k, 2] * w
    fx += ray_dirs[best_k, 0] * w_corridor
    fy += ray_dirs[best_k, 1] * w_corridor
    fz += ray_dirs[best_k, 2] * w_corridor
    norm = math.sqrt(fx * fx + fy * fy + fz * fz)
    if norm < 1e-9:
        ux = math.cos(eyaw)
        uy = math.sin(eyaw)
        uz = 0.0
    else:
        ux = fx / norm
        uy = fy / norm
        uz = fz / norm
    vwx = ux * speed_cap
    vwy = uy * speed_cap
    vwz = uz * speed_cap
    c = math.cos(eyaw)
    s = math.sin(eyaw)
    out_cmd[0] = c * vwx + s * vwy
    out_cmd[1] = -s * vwx + c * vwy
    out_cmd[2] = vwz
    heading_err = _wrap_pi(math.atan2(uy, ux) - eyaw)
    r = heading_err / dt
    if r > yaw_cap:
        r = yaw_cap
    elif r < -yaw_cap:
        r = -yaw_cap
    out_cmd[3] = r
