"""Sub-Nyquist spectral estimation from folded (modulo-ADC) multi-channel samples.

A quad-channel acquisition front end folds a high-dynamic-range sinusoidal
mixture into a small amplitude range at a sampling rate far below Nyquist;
this package simulates that front end and recovers the component frequencies
and amplitudes, exactly in the noiseless case and robustly under quantization,
noise, and fold imperfections.
"""

from .signal import (
    SamplingGrid,
    SinusoidalModel,
    add_noise,
    centered_modulo,
    evaluate_signal,
    mse,
    peak_amplitude,
    quantize,
    sample,
)
from .acquisition import (
    CaptureConfig,
    DifferenceStreams,
    MultiChannelCapture,
    capture,
    finite_difference,
    load_capture_csv,
    save_capture_csv,
    simulate_nonideal_fold,
)
from .numerics import (
    RestartNeeded,
    constrained_lstsq_update,
    dft,
    expand_roots,
    lstsq,
    roots,
    vandermonde,
)
from .exact import (
    ClusteredFrequencyError,
    ModelOrderError,
    PhaseUndefinedError,
    ResidueSpikes,
    SpectralEstimate,
    ThresholdSeparationError,
    aliased_frequencies,
    dealias,
    estimate_amplitudes,
    prony,
    recover_exact,
    separate_residues,
    unfold_channel,
)
from .robust import (
    RationalFitState,
    RobustConfig,
    RobustResult,
    amplitude_from_residue,
    clamped_average,
    estimate_sigma,
    joint_spectral_fit,
    recover_robust,
    refine_residues,
)
from .harness import (
    ExperimentSpec,
    RunReport,
    emit_plot_data,
    load_spec,
    load_suite,
    run_experiment,
    run_suite,
    write_report_csv,
)

__version__ = "0.1.0"
