#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace kfl {

/// Feature extractor (ReLU MLP, parameters u) plus label predictor
/// (affine stack with ReLU between layers and a softmax head, parameters v).
/// Devices may differ in hidden widths as long as the feature dimension
/// agrees, since only features are ever exchanged.
struct LocalModel {
  std::vector<Eigen::MatrixXd> extractor_w;  // layer i maps in -> out rows
  std::vector<Eigen::VectorXd> extractor_b;
  std::vector<Eigen::MatrixXd> predictor_w;
  std::vector<Eigen::VectorXd> predictor_b;

  int input_dim() const { return static_cast<int>(extractor_w.front().cols()); }
  int feature_dim() const { return static_cast<int>(extractor_w.back().rows()); }
  int num_classes() const { return static_cast<int>(predictor_w.back().rows()); }
};

/// Per-class feature prototypes with the sample counts behind them.
/// A zero count marks the row as absent rather than a zero prototype.
struct KnowledgeMatrix {
  Eigen::MatrixXd prototypes;    // C x p
  Eigen::VectorXi class_counts;  // C

  static KnowledgeMatrix empty(int classes, int feature_dim);
  bool has_class(int c) const { return class_counts[c] > 0; }
};

/// Samples stored column-wise: features is d x N, labels has N entries.
struct DatasetShard {
  Eigen::MatrixXd features;
  Eigen::VectorXi labels;
  Eigen::VectorXi per_class_counts;

  long size() const { return labels.size(); }
  int classes() const { return static_cast<int>(per_class_counts.size()); }
};

struct HyperParams {
  double lr_extractor = 0.05;   // eta_u
  double lr_predictor = 0.05;   // eta_v
  double knowledge_weight = 0.1;  // lambda
  int local_iters = 5;          // tau
  double momentum = 0.9;
};

/// Gradients of the knowledge-aided loss, stored in model shape. The
/// extractor part is d(F + lambda*L)/du, the predictor part is dF/dv.
struct LossGradients {
  double empirical_loss = 0.0;
  double knowledge_loss = 0.0;
  long uncovered_samples = 0;  // samples whose class has no global prototype
  LocalModel grad;
};

/// Class-sorted shard partition: every class is split into
/// classes_per_device*K/C shards and each device receives classes_per_device
/// of them at random, so a device sees at most that many distinct classes.
std::vector<DatasetShard> partition_non_iid(const DatasetShard& dataset,
                                            int devices,
                                            int classes_per_device,
                                            uint64_t seed);

/// Extractor output for a batch of column samples.
Eigen::MatrixXd extract_features(const LocalModel& model,
                                 const Eigen::MatrixXd& inputs);

/// Class probabilities for a batch of column samples.
Eigen::MatrixXd predict_probs(const LocalModel& model,
                              const Eigen::MatrixXd& inputs);

/// Single-sample forward pass: (feature vector, class probabilities).
std::pair<Eigen::VectorXd, Eigen::VectorXd> forward(const LocalModel& model,
                                                    const Eigen::VectorXd& x);

/// Mean cross-entropy of the model on the shard.
double empirical_loss(const LocalModel& model, const DatasetShard& shard);

/// Data-volume-weighted mean of per-device empirical losses.
double global_loss(const std::vector<LocalModel>& models,
                   const std::vector<DatasetShard>& shards);

/// Mean squared half-distance between extracted features and the global
/// prototype of each sample's class. Classes without a prototype contribute
/// zero; their sample count is reported through `uncovered` when given.
double knowledge_loss(const LocalModel& model, const DatasetShard& shard,
                      const KnowledgeMatrix& global_know,
                      long* uncovered = nullptr);

/// Loss values and analytic gradients in one backward pass.
LossGradients loss_and_gradients(const LocalModel& model,
                                 const DatasetShard& shard,
                                 const KnowledgeMatrix& global_know,
                                 double lambda);

/// tau full-batch gradient steps with momentum; the knowledge target stays
/// fixed at the round-start prototypes. Throws on non-finite gradients.
LocalModel local_update(const LocalModel& model, const DatasetShard& shard,
                        const KnowledgeMatrix& global_know,
                        const HyperParams& hp);

/// Per-class mean extractor output over the shard.
KnowledgeMatrix compute_knowledge(const LocalModel& model,
                                  const DatasetShard& shard);

/// Count-weighted mean of the contributors' prototypes per class. Classes no
/// contributor covers keep the previous round's row when one is supplied.
KnowledgeMatrix aggregate_knowledge(const std::vector<KnowledgeMatrix>& locals,
                                    const KnowledgeMatrix* previous = nullptr);

/// Pooled accuracy: every device scores its own test shard with its own
/// model; the result is total correct over total samples.
double evaluate_accuracy(const std::vector<LocalModel>& models,
                         const std::vector<DatasetShard>& test_shards);

/// All mutable learning state of the federation.
struct FederationState {
  std::vector<LocalModel> models;
  KnowledgeMatrix global_knowledge;
};

/// One protocol round over an externally chosen scheduled set: broadcast the
/// prototypes, locally train the scheduled devices, recompute and aggregate
/// their knowledge. Unscheduled devices are untouched.
void run_kfl_round(FederationState& state,
                   const std::vector<DatasetShard>& shards,
                   const std::vector<int>& scheduled, const HyperParams& hp);

/// Glorot-uniform initialization, deterministically seeded per device.
LocalModel init_model(int input_dim, const std::vector<int>& hidden_dims,
                      int feature_dim, int classes, uint64_t seed, int device);

/// IDX-format reader (images magic 0x803, labels 0x801, big-endian dims).
/// Pixel values are scaled to [0, 1].
DatasetShard load_mnist_idx(const std::string& images_path,
                            const std::string& labels_path, int classes = 10);

}  // namespace kfl
