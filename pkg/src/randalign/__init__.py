"""Message-passing GNN engine with random-alignment regularization and
over-smoothing diagnostics, on a self-contained dense autodiff tape."""

from .align import AlignConfig, align_row, randalign_update, sample_mix_coeff
from .autodiff import (
    DegenerateNeighborhoodError,
    DomainError,
    ShapeError,
    Tape,
    Tensor,
    apply_primitive,
    backward,
    finite_diff_check,
    masked_row_softmax,
    tensor,
)
from .diagnostics import (
    InfluenceReport,
    MeanAggregationModel,
    SmoothnessReport,
    UndefinedMetricError,
    influence_score,
    influence_vector,
    influence_walk_deviation,
    influence_walk_report,
    mean_pairwise_cosine,
    norm_stats,
    smoothing_fixture_curves,
)
from .experiments import (
    ConfigError,
    ExperimentConfig,
    load_config,
    run_matrix,
    run_matrix_records,
    verify_fixtures,
)
from .graphs import (
    Graph,
    GraphValidationError,
    LabeledGraphSet,
    graph_from_edge_list,
    is_connected,
    lazy_walk_distribution,
    normalized_operators,
    random_connected_graph,
    read_edge_list,
    read_features,
    read_labels,
    sbm_dataset,
    sbm_generate,
    two_node_fixture,
    write_edge_list,
    write_features,
    write_labels,
)
from .layers import (
    DenseParams,
    GraphContext,
    LayerParams,
    ModelConfig,
    bind_layer,
    encode,
    gat_forward,
    gatedgcn_forward,
    gcn_forward,
    init_dense_params,
    init_layer_params,
    readout_graph,
    readout_node,
    standardize,
)
from .model import ForwardResult, Model, build_model, load_params_csv, save_params_csv
from .svgplot import PlotSchemaError, emit_plot
from .training import (
    AdamState,
    PlateauSchedule,
    RunRecord,
    TrainConfig,
    adam_step,
    balanced_accuracy,
    class_weights_from_labels,
    cross_entropy_loss,
    evaluate,
    plateau_update,
    train_run,
)

__version__ = "0.1.0"
