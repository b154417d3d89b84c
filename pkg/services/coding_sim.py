"""Monte Carlo random coding over a compound channel with hidden state.

Each trial draws a message, sends its codeword through every state in turn (neither end
knows which state is active), decodes with the joint-typicality decoder that accepts a
codeword certified by any state, and measures V(Q_s, P_z) at the interference observer.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp

from config.logger import get_logger
from config.settings import settings
from models.distributions import CompoundChannel, Distribution, Kernel
from models.errors import InputError, ResourceGuardError
from models.schemas import (
    Codebook,
    CodebookMode,
    CoordinationReport,
    DecodeFailure,
    DecodeOutcome,
    MeanTypeReport,
    SimConfig,
    SimReport,
)
from services import rng as rngs
from services.info_measures import nats_to_bits
from services.typical_sets import batch_counts, typicality_mask
from services.types_core import compose, delta_preimage_membership

logger = get_logger()

# Outcome codes of one (trial, state) run.
SUCCESS, NONE_TYPICAL, AMBIGUOUS, WRONG_MESSAGE = 0, 1, 2, 3
# Inclusion-exclusion over state subsets is exponential in the state count.
MAX_ENSEMBLE_STATES = 12
# Symbols per Monte Carlo batch in the lemma checks.
SAMPLE_BATCH_SYMBOLS = 1 << 22
CONFIDENCE = 0.95
# Exponent above which exp() overflows a double.
_MAX_EXP = 709.0


def codebook_size(config: SimConfig) -> Tuple[float, Optional[int]]:
    """(log M, M) with M = ceil(e^{n(R - eps1)}); M is None when it does not fit the symbol guard."""

    log_size = config.log_codebook_size
    if log_size <= 0:
        return 0.0, 1
    if log_size + math.log(config.blocklength) > math.log(settings.codebook_symbol_guard):
        return log_size, None
    return log_size, int(math.ceil(math.exp(log_size)))


def _log_competitors(log_size: float) -> float:
    """log(M - 1) for M = ceil(e^{log_size})."""

    if log_size <= 0:
        return -math.inf
    if log_size > 30:
        return log_size
    return math.log(math.ceil(math.exp(log_size)) - 1)


def _wilson(successes: int, trials: int) -> Tuple[float, float]:
    ci = stats.binomtest(successes, trials).proportion_ci(confidence_level=CONFIDENCE, method="wilson")
    return float(ci.low), float(ci.high)


def _mean_ci(values: np.ndarray) -> Tuple[float, float]:
    mean = float(values.mean())
    if values.size < 2:
        return mean, mean
    spread = float(values.std(ddof=1)) / math.sqrt(values.size)
    half = stats.norm.ppf(0.5 + CONFIDENCE / 2) * spread
    return max(0.0, mean - half), min(2.0, mean + half)


def _joint_tables(input_probs: np.ndarray, kernels: Sequence[Kernel]) -> List[np.ndarray]:
    input_pmf = Distribution(probs=input_probs, alphabet=kernels[0].input_alphabet)
    return [compose(input_pmf, kernel).probs for kernel in kernels]


class _CompetitorLaw:
    """Exact probability that an independent codeword drawn i.i.d. from N is jointly typical
    with a fixed y under at least one state.

    Given y's column counts n_b, the counts of X' under each y-symbol are independent
    Multinomial(n_b, N) vectors and typicality is a per-cell interval condition, so each
    state subset's probability factorizes over columns. States are combined by
    inclusion-exclusion.
    """

    def __init__(self, input_probs: np.ndarray, joints: Sequence[np.ndarray], n: int, epsilon: float):
        self.n = n
        self.kx, self.ky = joints[0].shape
        with np.errstate(divide="ignore"):
            self.log_input = np.log(input_probs)
        counts = np.arange(n + 1)
        tol = epsilon / joints[0].size
        # allowed[s][a, b, c]: count c in cell (a, b) passes state s's typicality clauses
        self.allowed = [
            (np.abs(counts[None, None, :] / n - P[:, :, None]) < tol) & ((counts[None, None, :] == 0) | (P[:, :, None] > 0))
            for P in joints
        ]
        states = range(len(joints))
        self.subsets = [subset for size in range(1, len(joints) + 1) for subset in combinations(states, size)]
        self.signs = np.array([1.0 if len(subset) % 2 else -1.0 for subset in self.subsets])
        self._cache: Dict[Tuple[Tuple[int, ...], int, int], float] = {}

    def _column(self, subset: Tuple[int, ...], b: int, n_b: int) -> float:
        key = (subset, b, n_b)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        mask = np.logical_and.reduce([self.allowed[s][:, b, :n_b + 1] for s in subset])
        dp = np.full(n_b + 1, -np.inf)
        dp[0] = 0.0
        for a in range(self.kx):
            allowed = np.flatnonzero(mask[a])
            if allowed.size == 0:
                dp[:] = -np.inf
                break
            if np.isneginf(self.log_input[a]):
                weights = np.where(allowed == 0, 0.0, -np.inf)
            else:
                weights = allowed * self.log_input[a]
            weights = weights - gammaln(allowed + 1)
            updated = np.full(n_b + 1, -np.inf)
            for c, weight in zip(allowed, weights):
                if weight == -np.inf:
                    continue
                updated[c:] = np.logaddexp(updated[c:], dp[:n_b + 1 - c] + weight)
            dp = updated
        value = float(gammaln(n_b + 1) + dp[n_b])
        self._cache[key] = value
        return value

    def log_probability(self, y: np.ndarray) -> float:
        columns = np.bincount(y, minlength=self.ky)
        terms = np.array([sum(self._column(subset, b, int(columns[b])) for b in range(self.ky))
                          for subset in self.subsets])
        if np.all(terms == -np.inf):
            return -math.inf
        log_abs, sign = logsumexp(terms, b=self.signs, return_sign=True)
        return float(log_abs) if sign > 0 else -math.inf


def _competitor_count_class(rng: np.random.Generator, log_p: float, log_competitors: float) -> int:
    """Draw min(K, 2) for K ~ Binomial(M - 1, p), all in log space."""

    if log_competitors == -math.inf or log_p == -math.inf:
        return 0
    if log_p >= 0:
        return 1 if log_competitors == 0 else 2
    p = math.exp(log_p)
    log_keep = math.log1p(-p)
    log_rate = math.log(-log_keep) if log_keep < 0 else log_p
    if log_competitors + log_rate > _MAX_EXP:
        return 2
    # Pr(K = 0) = (1 - p)^(M - 1), Pr(K = 1) = (M - 1) p (1 - p)^(M - 2)
    log_none = -math.exp(log_competitors + log_rate)
    log_one = log_competitors + log_p + log_none - log_keep
    u = rng.random()
    none = math.exp(log_none)
    if u < none:
        return 0
    if u < none + math.exp(min(log_one, 0.0)):
        return 1
    return 2


class CodingSimulator:
    """Random-coding experiments and the concentration lemma checks."""

    def __init__(self, threads: Optional[int] = None):
        self.threads = threads

    def _workers(self, requested: Optional[int]) -> int:
        return max(1, requested or self.threads or settings.threads)

    # -- building blocks ---------------------------------------------------

    def _checked_size(self, config: SimConfig) -> int:
        log_size, size = codebook_size(config)
        if size is None:
            logger.warning("Codebook guard tripped", log_codebook_size=log_size, blocklength=config.blocklength,
                           guard=settings.codebook_symbol_guard)
            raise ResourceGuardError("codebook would exceed the symbol guard",
                                     {"log_codebook_size": log_size, "blocklength": config.blocklength,
                                      "guard": settings.codebook_symbol_guard})
        return size

    def generate_codebook(self, config: SimConfig, trial: Optional[int] = None) -> Codebook:
        """Codebook for `trial` (fresh mode), or the batch codebook when trial is None."""

        size = self._checked_size(config)
        key = (rngs.CODEBOOK_STREAM,) if trial is None else (rngs.CODEBOOK_STREAM, trial)
        generator = rngs.substream(config.seed, *key)
        symbols = rngs.sample_categorical(generator, config.input_pmf.probs, size * config.blocklength)
        return Codebook(codewords=symbols.reshape(size, config.blocklength))

    def transmit(self, x: Sequence, state_index: int, channel: CompoundChannel,
                 rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """One use of the selected state's kernels per input symbol."""

        if not 0 <= state_index < channel.num_states:
            raise InputError("state index out of range", {"state": state_index, "states": channel.num_states})
        x = channel.x_alphabet.encode(x)
        state = channel.states[state_index]
        y = rngs.sample_through(rng, x, state.kernel_y.rows)
        z = rngs.sample_through(rng, x, state.kernel_z.rows)
        return y, z

    def decode(self, y: Sequence, codebook: Codebook, N: Distribution, state_kernels: Sequence[Kernel],
               epsilon: float) -> DecodeOutcome:
        """Unique message whose codeword is jointly typical with y under some state's N J_s."""

        if not state_kernels:
            raise InputError("decoder needs at least one state kernel")
        y = state_kernels[0].output_alphabet.encode(y)
        if y.size != codebook.blocklength:
            raise InputError("output length differs from the codeword length",
                             {"output": int(y.size), "blocklength": codebook.blocklength})
        return self._decode(y, codebook.codewords, _joint_tables(N.probs, state_kernels), epsilon)

    @staticmethod
    def _certified(y: np.ndarray, codewords: np.ndarray, joints: Sequence[np.ndarray], epsilon: float) -> np.ndarray:
        """Mask (messages, states) of codewords jointly typical with y."""

        kx, ky = joints[0].shape
        counts = batch_counts(codewords * ky + y[None, :], kx * ky).reshape(-1, kx, ky)
        return np.stack([typicality_mask(counts, y.size, P, epsilon) for P in joints], axis=1)

    def _decode(self, y: np.ndarray, codewords: np.ndarray, joints: Sequence[np.ndarray],
                epsilon: float) -> DecodeOutcome:
        certified = self._certified(y, codewords, joints, epsilon)
        messages = np.flatnonzero(certified.any(axis=1))
        if messages.size == 0:
            return DecodeOutcome(failure=DecodeFailure.NONE_TYPICAL)
        if messages.size > 1:
            return DecodeOutcome(failure=DecodeFailure.AMBIGUOUS)
        message = int(messages[0])
        return DecodeOutcome(message=message, certifying_states=np.flatnonzero(certified[message]).tolist())

    # -- trials ------------------------------------------------------------

    def _explicit_trial(self, config: SimConfig, trial: int, joints: List[np.ndarray],
                        targets: np.ndarray, shared: Optional[Codebook]) -> np.ndarray:
        codebook = shared if shared is not None else self.generate_codebook(config, trial)
        outcomes = np.zeros((config.channel.num_states, 2))
        for s in range(config.channel.num_states):
            generator = rngs.substream(config.seed, rngs.CHANNEL_STREAM, trial, s)
            message = int(generator.integers(codebook.size))
            y, z = self.transmit(codebook.codewords[message], s, config.channel, generator)
            decoded = self._decode(y, codebook.codewords, joints, config.epsilon)
            if decoded.failure is DecodeFailure.NONE_TYPICAL:
                outcomes[s, 0] = NONE_TYPICAL
            elif decoded.failure is DecodeFailure.AMBIGUOUS:
                outcomes[s, 0] = AMBIGUOUS
            elif decoded.message != message:
                outcomes[s, 0] = WRONG_MESSAGE
            outcomes[s, 1] = _variational(z, targets[s])
        return outcomes

    def _ensemble_trial(self, config: SimConfig, trial: int, joints: List[np.ndarray], targets: np.ndarray,
                        law: _CompetitorLaw, log_competitors: float) -> np.ndarray:
        n = config.blocklength
        codeword = rngs.sample_categorical(rngs.substream(config.seed, rngs.CODEBOOK_STREAM, trial),
                                           config.input_pmf.probs, n)
        outcomes = np.zeros((config.channel.num_states, 2))
        for s in range(config.channel.num_states):
            y, z = self.transmit(codeword, s, config.channel,
                                 rngs.substream(config.seed, rngs.CHANNEL_STREAM, trial, s))
            true_typical = bool(self._certified(y, codeword[None, :], joints, config.epsilon).any())
            others = _competitor_count_class(rngs.substream(config.seed, rngs.COMPETITOR_STREAM, trial, s),
                                             law.log_probability(y), log_competitors)
            if true_typical:
                outcomes[s, 0] = SUCCESS if others == 0 else AMBIGUOUS
            else:
                outcomes[s, 0] = (NONE_TYPICAL, WRONG_MESSAGE, AMBIGUOUS)[others]
            outcomes[s, 1] = _variational(z, targets[s])
        return outcomes

    def run_trials(self, config: SimConfig) -> SimReport:
        channel = config.channel
        kernels = [state.kernel_y for state in channel.states]
        joints = _joint_tables(config.input_pmf.probs, kernels)
        targets = np.array([t.probs for t in config.state_targets()])
        log_size = config.log_codebook_size
        mode = config.codebook_mode
        logger.info("Simulation started", mode=mode.value, blocklength=config.blocklength, trials=config.trials,
                    states=channel.num_states, log_codebook_size=log_size)

        if mode is CodebookMode.ENSEMBLE:
            if channel.num_states > MAX_ENSEMBLE_STATES:
                raise ResourceGuardError("too many states for the ensemble competitor law",
                                         {"states": channel.num_states, "limit": MAX_ENSEMBLE_STATES})
            law = _CompetitorLaw(config.input_pmf.probs, joints, config.blocklength, config.epsilon)
            log_competitors = _log_competitors(log_size)

            def trial(t: int) -> np.ndarray:
                return self._ensemble_trial(config, t, joints, targets, law, log_competitors)
        else:
            self._checked_size(config)
            shared = self.generate_codebook(config) if mode is CodebookMode.SHARED else None

            def trial(t: int) -> np.ndarray:
                return self._explicit_trial(config, t, joints, targets, shared)

        with ThreadPoolExecutor(max_workers=self._workers(config.threads)) as pool:
            outcomes = np.stack(list(pool.map(trial, range(config.trials))))
        report = self._report(config, outcomes, log_size)
        logger.info("Simulation finished", max_state_error=report.max_state_error,
                    mean_V=report.per_state_mean_V)
        return report

    def _report(self, config: SimConfig, outcomes: np.ndarray, log_size: float) -> SimReport:
        trials = config.trials
        codes = outcomes[:, :, 0].astype(int)
        distances = outcomes[:, :, 1]
        edges = np.linspace(0.0, 2.0, config.histogram_bins + 1)
        threshold = config.coordination_threshold
        errors = (codes != SUCCESS).sum(axis=0)
        exceed = (distances > threshold).sum(axis=0)
        mean_V = distances.mean(axis=0)
        verdicts = None
        if config.deltas is not None:
            verdicts = [bool(m <= d) for m, d in zip(mean_V, config.deltas)]
        return SimReport(
            per_state_error_rate=[float(e) / trials for e in errors],
            per_state_error_ci=[_wilson(int(e), trials) for e in errors],
            max_state_error=float(errors.max()) / trials,
            per_state_none_typical=[int(v) for v in (codes == NONE_TYPICAL).sum(axis=0)],
            per_state_ambiguous=[int(v) for v in (codes == AMBIGUOUS).sum(axis=0)],
            per_state_wrong_message=[int(v) for v in (codes == WRONG_MESSAGE).sum(axis=0)],
            per_state_mean_V=[float(m) for m in mean_V],
            per_state_V_ci=[_mean_ci(distances[:, s]) for s in range(distances.shape[1])],
            per_state_exceedance=[float(e) / trials for e in exceed],
            per_state_exceedance_ci=[_wilson(int(e), trials) for e in exceed],
            per_state_coordination_met=verdicts,
            per_state_V_histogram=[np.histogram(distances[:, s], bins=edges)[0].tolist()
                                   for s in range(distances.shape[1])],
            histogram_edges=edges.tolist(),
            coordination_threshold=threshold,
            trials_run=trials,
            seed_used=config.seed,
            codebook_mode=config.codebook_mode,
            blocklength=config.blocklength,
            rate_nats=config.rate_nats,
            rate_bits=nats_to_bits(config.rate_nats),
            log_codebook_size=log_size,
        )

    # -- type lemmas -------------------------------------------------------

    def expected_type(self, pmf_sequence: Sequence[Distribution]) -> Distribution:
        """Average of the per-position marginals."""

        if not pmf_sequence:
            raise InputError("pmf sequence must be nonempty")
        alphabet = pmf_sequence[0].alphabet
        if any(p.size != alphabet.size for p in pmf_sequence):
            raise InputError("every position must share one alphabet")
        return Distribution(probs=np.mean([p.probs for p in pmf_sequence], axis=0), alphabet=alphabet)

    def empirical_mean_type(self, pmf_sequence: Sequence[Distribution], samples: int, seed: int) -> MeanTypeReport:
        """Sample mean and standard error of P_x for x with independent positions."""

        expected = self.expected_type(pmf_sequence)
        if samples < 2:
            raise InputError("at least two samples are needed for a standard error")
        table = np.array([p.probs for p in pmf_sequence])
        length, k = table.shape
        generator = rngs.substream(seed, rngs.SAMPLING_STREAM)
        batch = max(1, SAMPLE_BATCH_SYMBOLS // length)
        types = []
        for start in range(0, samples, batch):
            draws = rngs.sample_product(generator, table, min(batch, samples - start))
            types.append(batch_counts(draws, k) / length)
        types = np.vstack(types)
        return MeanTypeReport(expected=expected.probs.tolist(),
                              empirical_mean=types.mean(axis=0).tolist(),
                              standard_error=(types.std(axis=0, ddof=1) / math.sqrt(samples)).tolist(),
                              samples=samples)

    def coordination_lemma_check(self, N: Distribution, kernel: Kernel, Q: Distribution, n_list: Sequence[int],
                                 trials: int, threshold: Optional[float] = None, seed: int = 0) -> CoordinationReport:
        """Pr(V(Q, P_z) > threshold) across blocklengths for z the output of x ~ N^n through kernel."""

        if not delta_preimage_membership(N, Q, kernel, 0.0):
            raise InputError("input distribution is not in the exact pre-image of the target",
                             {"input": N.probs.tolist(), "target": Q.probs.tolist()})
        if trials < 1 or not n_list or any(n < 1 for n in n_list):
            raise InputError("trials and blocklengths must be positive")
        threshold = threshold if threshold is not None else settings.coordination_threshold
        k = kernel.output_alphabet.size
        exceedance, intervals, means = [], [], []
        for index, n in enumerate(n_list):
            generator = rngs.substream(seed, rngs.SAMPLING_STREAM, index)
            batch = max(1, SAMPLE_BATCH_SYMBOLS // n)
            distances = []
            for start in range(0, trials, batch):
                size = min(batch, trials - start)
                x = rngs.sample_categorical(generator, N.probs, size * n).reshape(size, n)
                z = rngs.sample_through(generator, x, kernel.rows)
                distances.append(np.abs(batch_counts(z, k) / n - Q.probs).sum(axis=1))
            distances = np.concatenate(distances)
            hits = int((distances > threshold).sum())
            exceedance.append(hits / trials)
            intervals.append(_wilson(hits, trials))
            means.append(float(distances.mean()))
        decreasing = all(b <= a for a, b in zip(exceedance, exceedance[1:]))
        logger.info("Coordination check finished", blocklengths=list(n_list), exceedance=exceedance)
        return CoordinationReport(blocklengths=list(n_list), threshold=threshold, exceedance=exceedance,
                                  exceedance_ci=intervals, mean_V=means, trials=trials, decreasing=decreasing)


def _variational(z: np.ndarray, target: np.ndarray) -> float:
    return float(np.abs(np.bincount(z, minlength=target.size) / z.size - target).sum())


# Global simulator instance
coding_simulator = CodingSimulator()


def generate_codebook(config: SimConfig, trial: Optional[int] = None) -> Codebook:
    return coding_simulator.generate_codebook(config, trial)


def transmit(x: Sequence, state_index: int, channel: CompoundChannel,
             rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    return coding_simulator.transmit(x, state_index, channel, rng)


def decode(y: Sequence, codebook: Codebook, N: Distribution, state_kernels: Sequence[Kernel],
           epsilon: float) -> DecodeOutcome:
    return coding_simulator.decode(y, codebook, N, state_kernels, epsilon)


def run_trials(config: SimConfig) -> SimReport:
    return coding_simulator.run_trials(config)


def expected_type(pmf_sequence: Sequence[Distribution]) -> Distribution:
    return coding_simulator.expected_type(pmf_sequence)


def empirical_mean_type(pmf_sequence: Sequence[Distribution], samples: int, seed: int) -> MeanTypeReport:
    return coding_simulator.empirical_mean_type(pmf_sequence, samples, seed)


def coordination_lemma_check(N: Distribution, kernel: Kernel, Q: Distribution, n_list: Sequence[int],
                             trials: int, threshold: Optional[float] = None, seed: int = 0) -> CoordinationReport:
    return coding_simulator.coordination_lemma_check(N, kernel, Q, n_list, trials, threshold, seed)
