"""Backward passes, Adam, parameter initialization and the training loop.

All gradients are exact chain-rule gradients and are validated against
central finite differences. The statistical layer supports two variance
gradient constants: the exact population-variance factor 2/N (default,
used for training) and a legacy 2(N-1)/N^2 factor kept for documentation;
their ratio is (N-1)/N exactly.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .grid import Connectivity, build_grid_graph
from .layers import (
    DenseLayer,
    SpectralConvLayer,
    StatCache,
    dynamic_pool_backward,
    signal_power_stack,
    softmax_nll,
)
from .network import Network, NetworkCache
from .seeding import seed_stream


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class ConvGradients:
    d_alpha: np.ndarray
    d_beta: np.ndarray
    d_inputs: np.ndarray


def spectral_conv_backward(layer: SpectralConvLayer, cache, upstream: np.ndarray) -> ConvGradients:
    """Gradients of one conv layer given dE/dz for its output maps.

    The active-set restriction enters as a mask on the upstream signal:
    output values off the active set never existed, so nothing flows back
    through them.
    """
    upstream = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if upstream.shape[0] != layer.num_filters:
        raise ValueError(
            f"upstream has {upstream.shape[0]} maps, layer has {layer.num_filters} filters"
        )
    masked = upstream * cache.active_mask  # (K, N)

    # inner[k, m, i] = <L^m y_k, masked upstream of filter i>
    inner = np.einsum("kmn,in->kmi", cache.signal_powers, masked)
    d_alpha = np.einsum("k,kmi->im", layer.beta, inner)
    d_beta = np.einsum("im,kmi->k", layer.alpha, inner)

    if layer.degree >= 1:
        laplacian = layer.powers.matrices[1]
        filtered = np.zeros(masked.shape[1])
        for i in range(layer.num_filters):
            stack = signal_power_stack(laplacian, masked[i], layer.degree)
            filtered += layer.alpha[i] @ stack
    else:
        filtered = layer.alpha[:, 0] @ masked
    d_inputs = layer.beta[:, np.newaxis] * filtered[np.newaxis, :]

    return ConvGradients(d_alpha, d_beta, d_inputs)


def statistical_backward(
    cache: StatCache,
    d_means: np.ndarray,
    d_variances: np.ndarray,
    shifted_laplacian,
    variance_mode: str = "exact",
) -> np.ndarray:
    """Gradient with respect to the statistical layer's input maps.

    variance_mode "exact" uses the population-variance factor 2/N;
    "legacy" uses 2(N-1)/N^2. The magnitude's subgradient at zero is zero,
    which encourages sparse feature maps.
    """
    t = cache.chebyshev
    magnitudes = cache.magnitudes
    num_maps, orders, n = t.shape

    mu = magnitudes.mean(axis=2)
    if variance_mode == "exact":
        var_factor = 2.0 / n
    elif variance_mode == "legacy":
        var_factor = 2.0 * (n - 1) / n**2
    else:
        raise ValueError(f"unknown variance_mode {variance_mode!r}")

    d_mag = (
        np.asarray(d_means)[:, :, np.newaxis] / n
        + var_factor
        * (magnitudes - mu[:, :, np.newaxis])
        * np.asarray(d_variances)[:, :, np.newaxis]
    )
    adjoint = d_mag * np.sign(t)

    # reverse the recursion t_k = 2 Ls t_{k-1} - t_{k-2}
    for k in range(orders - 1, 1, -1):
        adjoint[:, k - 1] += 2.0 * (shifted_laplacian @ adjoint[:, k].T).T
        adjoint[:, k - 2] -= adjoint[:, k]
    if orders >= 2:
        adjoint[:, 0] += (shifted_laplacian @ adjoint[:, 1].T).T
    return adjoint[:, 0]


def dense_backward(layer: DenseLayer, x: np.ndarray, upstream: np.ndarray):
    """(dW, db, dx) for an affine layer."""
    upstream = np.asarray(upstream, dtype=np.float64)
    d_weights = np.outer(upstream, x)
    d_biases = upstream.copy()
    d_x = layer.weights.T @ upstream
    return d_weights, d_biases, d_x


def softmax_nll_backward(probs: np.ndarray, label: int) -> np.ndarray:
    grad = probs.copy()
    grad[label] -= 1.0
    return grad


def network_gradients(net: Network, cache: NetworkCache, label: int, variance_mode: str = "exact"):
    """Loss and gradients of every parameter for one cached forward pass.

    Returns (loss, grads, d_signal) where grads maps parameter names to
    arrays shaped like the parameters and d_signal is the gradient with
    respect to the input signal.
    """
    probs, loss = softmax_nll(cache.logits, label)
    upstream = softmax_nll_backward(probs, label)

    grads = {}
    for j in range(len(net.dense_layers) - 1, -1, -1):
        d_w, d_b, upstream = dense_backward(
            net.dense_layers[j], cache.dense_inputs[j], upstream
        )
        grads[f"fc{j}.weight"] = d_w
        grads[f"fc{j}.bias"] = d_b

    num_maps = cache.stats.means.shape[0]
    per_map = upstream.reshape(num_maps, net.stat_order + 1, 2)
    d_maps = statistical_backward(
        cache.stat_cache,
        per_map[:, :, 0],
        per_map[:, :, 1],
        net.shifted_laplacian,
        variance_mode,
    )

    for i in range(len(net.conv_layers) - 1, -1, -1):
        d_z = dynamic_pool_backward(cache.pool_states[i], d_maps)
        conv_grads = spectral_conv_backward(net.conv_layers[i], cache.conv_caches[i], d_z)
        grads[f"conv{i}.alpha"] = conv_grads.d_alpha
        grads[f"conv{i}.beta"] = conv_grads.d_beta
        d_maps = conv_grads.d_inputs

    return float(loss), grads, d_maps[0]


def loss_and_gradients(net: Network, signal: np.ndarray, label: int, variance_mode: str = "exact"):
    cache = net.forward(signal)
    loss, grads, _ = network_gradients(net, cache, label, variance_mode)
    return loss, grads


# --- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment accumulators with standard bias correction."""

    learning_rate: float = 1e-3
    decay1: float = 0.9
    decay2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update, in place, in sorted-name order."""
    state.step += 1
    correct1 = 1.0 - state.decay1**state.step
    correct2 = 1.0 - state.decay2**state.step
    for name in sorted(params):
        param, grad = params[name], grads[name]
        if param.shape != grad.shape:
            raise ValueError(
                f"{name}: gradient shape {grad.shape} != parameter shape {param.shape}"
            )
        if name not in state.first_moment:
            state.first_moment[name] = np.zeros_like(param)
            state.second_moment[name] = np.zeros_like(param)
        m, v = state.first_moment[name], state.second_moment[name]
        m *= state.decay1
        m += (1.0 - state.decay1) * grad
        v *= state.decay2
        v += (1.0 - state.decay2) * grad * grad
        param -= state.learning_rate * (m / correct1) / (np.sqrt(v / correct2) + state.epsilon)
    return params


# --- initialization ----------------------------------------------------------

INIT_SAMPLE_POINTS = 256
INIT_RIDGE = 1e-8


def init_spectral_filters(num_windows: int, degree: int) -> np.ndarray:
    """Polynomial fits of overlapping rectangular windows tiling [0, 2].

    The windows have equal width and 50% overlap and jointly cover the full
    spectrum; each row of the result holds the least-squares coefficients
    of one window's indicator, sampled at 256 midpoints.
    """
    if num_windows < 1:
        raise ValueError(f"num_windows must be >= 1, got {num_windows}")
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")

    # midpoint sampling keeps window boundaries off the grid
    lambdas = (np.arange(INIT_SAMPLE_POINTS) + 0.5) * (2.0 / INIT_SAMPLE_POINTS)
    vandermonde = np.vander(lambdas, degree + 1, increasing=True)
    gram = vandermonde.T @ vandermonde + INIT_RIDGE * np.eye(degree + 1)

    width = 4.0 / (num_windows + 1)
    alpha = np.empty((num_windows, degree + 1))
    for i in range(num_windows):
        lo = i * width / 2.0
        hi = lo + width
        indicator = ((lambdas > lo) & (lambdas < hi)).astype(np.float64)
        alpha[i] = np.linalg.solve(gram, vandermonde.T @ indicator)
    return alpha


def init_network(net: Network, seed: int) -> None:
    """Window-fit filter coefficients, uniform beta in [0,1], uniform FC in [-1,1]."""
    rng = seed_stream(seed, "init")
    for layer in net.conv_layers:
        layer.alpha[...] = init_spectral_filters(layer.num_filters, layer.degree)
        layer.beta[...] = rng.uniform(0.0, 1.0, size=layer.beta.shape)
    for layer in net.dense_layers:
        layer.weights[...] = rng.uniform(-1.0, 1.0, size=layer.weights.shape)
        layer.biases[...] = rng.uniform(-1.0, 1.0, size=layer.biases.shape)


# --- training loop -----------------------------------------------------------

@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # dicts: epoch, train_loss, train_acc, val_loss, val_acc
    best_epoch: int = -1
    best_val_acc: float = float("-inf")
    best_params: dict = field(default_factory=dict)

    def csv_rows(self):
        return [
            (r["epoch"], r["train_loss"], r["train_acc"], r["val_loss"], r["val_acc"])
            for r in self.rows
        ]


def evaluate(net: Network, signals: np.ndarray, labels: np.ndarray):
    """(mean loss, accuracy) over a labeled signal array."""
    total_loss = 0.0
    correct = 0
    for signal, label in zip(signals, labels):
        logits = net.logits(signal)
        _, loss = softmax_nll(logits, int(label))
        total_loss += loss
        correct += int(np.argmax(logits)) == int(label)
    count = max(len(labels), 1)
    return total_loss / count, correct / count


def train(
    net: Network,
    train_signals: np.ndarray,
    train_labels: np.ndarray,
    val_signals: np.ndarray,
    val_labels: np.ndarray,
    epochs: int,
    seed: int,
    batch_size: int = 32,
    learning_rate: float = 1e-3,
    adam_state: AdamState | None = None,
    progress=None,
) -> TrainLog:
    """Seeded, single-threaded training; keeps the best-validation snapshot.

    Gradients are averaged over each batch in a fixed sample order, so the
    run is a pure function of (parameters, data, seed).
    """
    if len(train_signals) != len(train_labels):
        raise ValueError("training signals and labels differ in length")
    state = adam_state if adam_state is not None else AdamState(learning_rate=learning_rate)
    shuffle_rng = seed_stream(seed, "shuffle")
    params = net.parameters()
    log = TrainLog()

    for epoch in range(epochs):
        order = shuffle_rng.permutation(len(train_signals))
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            batch_grads = {name: np.zeros_like(p) for name, p in params.items()}
            batch_loss = 0.0
            for idx in batch:
                loss, grads = loss_and_gradients(
                    net, train_signals[idx], int(train_labels[idx])
                )
                batch_loss += loss
                for name in batch_grads:
                    batch_grads[name] += grads[name]
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}"
                )
            scale = 1.0 / len(batch)
            for name in batch_grads:
                batch_grads[name] *= scale
            adam_step(state, params, batch_grads)

        train_loss, train_acc = evaluate(net, train_signals, train_labels)
        val_loss, val_acc = evaluate(net, val_signals, val_labels)
        row = {
            "epoch": epoch,
            "train_loss": train_loss,
            "train_acc": train_acc,
            "val_loss": val_loss,
            "val_acc": val_acc,
        }
        log.rows.append(row)
        if val_acc > log.best_val_acc:
            log.best_val_acc = val_acc
            log.best_epoch = epoch
            log.best_params = {k: v.copy() for k, v in params.items()}
        if progress is not None:
            progress(row)
    return log


# --- finite-difference gradient checking -------------------------------------

FD_STEP = 1e-5
FD_TOLERANCE = 1e-5
KINK_EPS = 1e-6
GRADCHECK_ARCH = "SC[2, 2]-DP[20]-S[4]-FC[8]-FC[3]"
GRADCHECK_GRID = 10


def _forward_state(net: Network, signal: np.ndarray, label: int):
    """Loss plus the pool selections and Chebyshev signs for kink masking."""
    cache = net.forward(signal)
    _, loss = softmax_nll(cache.logits, label)
    selections = [np.concatenate(s.per_filter_nodes) for s in cache.pool_states]
    signs = np.sign(cache.stat_cache.chebyshev)
    return float(loss), selections, signs


def gradient_check(
    arch: str = GRADCHECK_ARCH,
    grid_size: int = GRADCHECK_GRID,
    seed: int = 0,
    step: float = FD_STEP,
    corrupt_group: str | None = None,
):
    """Compare analytic gradients with central finite differences.

    Coordinates whose perturbation flips a pooling selection or crosses a
    magnitude kink (a Chebyshev value changing sign across the step) are
    masked, as are near-kink values below 1e-6. Returns a report dict per
    parameter group with the worst relative error over unmasked
    coordinates. `corrupt_group` scales that group's analytic gradient by
    1.01 as a negative-control hook.
    """
    graph = build_grid_graph(grid_size, grid_size, Connectivity.EIGHT)
    net = Network(arch, graph)
    init_network(net, seed)
    rng = seed_stream(seed, "gradcheck-data")
    signal = rng.uniform(0.0, 1.0, graph.num_nodes)
    label = int(rng.integers(net.num_classes))

    cache = net.forward(signal)
    base_loss, analytic, _ = network_gradients(net, cache, label)

    if corrupt_group is not None:
        matched = [n for n in analytic if n.endswith(corrupt_group) or corrupt_group in n]
        if not matched:
            raise ValueError(f"corrupt_group {corrupt_group!r} matches no parameter")
        for name in matched:
            analytic[name] = analytic[name] * 1.01

    params = net.parameters()
    report = {}
    for name in sorted(params):
        param = params[name]
        flat = param.ravel()
        worst = 0.0
        checked = 0
        masked = 0
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + step
            loss_hi, sel_hi, sign_hi = _forward_state(net, signal, label)
            flat[idx] = original - step
            loss_lo, sel_lo, sign_lo = _forward_state(net, signal, label)
            flat[idx] = original

            pool_flip = any(
                len(a) != len(b) or np.any(a != b) for a, b in zip(sel_hi, sel_lo)
            )
            kink_cross = np.any(sign_hi * sign_lo < 0)
            if pool_flip or kink_cross:
                masked += 1
                continue

            numeric = (loss_hi - loss_lo) / (2.0 * step)
            exact = analytic[name].ravel()[idx]
            denom = max(abs(numeric), abs(exact), 1e-8)
            worst = max(worst, abs(numeric - exact) / denom)
            checked += 1
        report[name] = {"worst_rel_err": worst, "checked": checked, "masked": masked}

    groups = {}
    for name, entry in report.items():
        group = "alpha" if name.endswith("alpha") else "beta" if name.endswith("beta") else "fc"
        g = groups.setdefault(group, {"worst_rel_err": 0.0, "checked": 0, "masked": 0})
        g["worst_rel_err"] = max(g["worst_rel_err"], entry["worst_rel_err"])
        g["checked"] += entry["checked"]
        g["masked"] += entry["masked"]
    passed = all(
        g["worst_rel_err"] <= FD_TOLERANCE and g["checked"] > 0 for g in groups.values()
    )
    return {"per_parameter": report, "per_group": groups, "passed": passed, "loss": base_loss}


# --- checkpoints ---------------------------------------------------------------

CHECKPOINT_VERSION = 1


def _encode_array(array: np.ndarray) -> dict:
    data = np.ascontiguousarray(array, dtype="<f8")
    return {
        "shape": list(array.shape),
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def _decode_array(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).copy()


def save_checkpoint(
    path,
    net: Network,
    adam_state: AdamState | None = None,
    seed: int | None = None,
    epoch: int = 0,
) -> None:
    """Write a self-contained JSON checkpoint (little-endian f64 payloads)."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "arch": net.arch_string,
        "grid": {
            "height": net.graph.height,
            "width": net.graph.width,
            "connectivity": net.graph.connectivity.value,
        },
        "seed": seed,
        "epoch": epoch,
        "params": {k: _encode_array(v) for k, v in net.parameters().items()},
    }
    if adam_state is not None:
        payload["adam"] = {
            "learning_rate": adam_state.learning_rate,
            "decay1": adam_state.decay1,
            "decay2": adam_state.decay2,
            "epsilon": adam_state.epsilon,
            "step": adam_state.step,
            "first_moment": {k: _encode_array(v) for k, v in adam_state.first_moment.items()},
            "second_moment": {k: _encode_array(v) for k, v in adam_state.second_moment.items()},
        }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True)


def load_checkpoint(path):
    """Rebuild (network, adam_state, meta) from a checkpoint file."""
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    grid = payload["grid"]
    graph = build_grid_graph(
        grid["height"], grid["width"], Connectivity(grid["connectivity"])
    )
    net = Network(payload["arch"], graph)
    net.set_parameters({k: _decode_array(v) for k, v in payload["params"].items()})

    adam_state = None
    if "adam" in payload:
        entry = payload["adam"]
        adam_state = AdamState(
            learning_rate=entry["learning_rate"],
            decay1=entry["decay1"],
            decay2=entry["decay2"],
            epsilon=entry["epsilon"],
            step=entry["step"],
            first_moment={k: _decode_array(v) for k, v in entry["first_moment"].items()},
            second_moment={k: _decode_array(v) for k, v in entry["second_moment"].items()},
        )
    meta = {"seed": payload.get("seed"), "epoch": payload.get("epoch")}
    return net, adam_state, meta
