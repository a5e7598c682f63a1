#include "kfl/kfl_core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "kfl/rng.hpp"

namespace kfl {

namespace {

Eigen::MatrixXd relu(const Eigen::MatrixXd& z) { return z.cwiseMax(0.0); }

// Forward through an affine stack; ReLU after every layer when
// `relu_last` is set, otherwise the last layer stays linear.
void forward_stack(const std::vector<Eigen::MatrixXd>& w,
                   const std::vector<Eigen::VectorXd>& b,
                   const Eigen::MatrixXd& input, bool relu_last,
                   std::vector<Eigen::MatrixXd>& preacts,
                   std::vector<Eigen::MatrixXd>& acts) {
  preacts.clear();
  acts.clear();
  acts.push_back(input);
  for (size_t i = 0; i < w.size(); ++i) {
    Eigen::MatrixXd z = (w[i] * acts.back()).colwise() + b[i];
    preacts.push_back(z);
    bool last = (i + 1 == w.size());
    acts.push_back(last && !relu_last ? z : relu(z));
  }
}

Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd shifted =
      logits.rowwise() - logits.colwise().maxCoeff();
  Eigen::MatrixXd e = shifted.array().exp();
  Eigen::RowVectorXd sums = e.colwise().sum();
  return e.array().rowwise() / sums.array();
}

struct ForwardPass {
  std::vector<Eigen::MatrixXd> ext_pre, ext_act;    // acts[0] = input
  std::vector<Eigen::MatrixXd> pred_pre, pred_act;  // acts[0] = feature
  Eigen::MatrixXd probs;
};

ForwardPass run_forward(const LocalModel& m, const Eigen::MatrixXd& inputs) {
  if (inputs.rows() != m.input_dim()) {
    throw std::invalid_argument("forward: input dimension mismatch");
  }
  ForwardPass fp;
  forward_stack(m.extractor_w, m.extractor_b, inputs, /*relu_last=*/true,
                fp.ext_pre, fp.ext_act);
  forward_stack(m.predictor_w, m.predictor_b, fp.ext_act.back(),
                /*relu_last=*/false, fp.pred_pre, fp.pred_act);
  fp.probs = softmax_columns(fp.pred_pre.back());
  return fp;
}

// Backprop a stack given the gradient at its output (post-activation for
// hidden layers, pre-activation for a linear head handled by the caller).
void backward_stack(const std::vector<Eigen::MatrixXd>& w,
                    const std::vector<Eigen::MatrixXd>& preacts,
                    const std::vector<Eigen::MatrixXd>& acts,
                    Eigen::MatrixXd delta, bool delta_is_preact,
                    std::vector<Eigen::MatrixXd>& grad_w,
                    std::vector<Eigen::VectorXd>& grad_b,
                    Eigen::MatrixXd* grad_input) {
  grad_w.resize(w.size());
  grad_b.resize(w.size());
  for (int i = static_cast<int>(w.size()) - 1; i >= 0; --i) {
    if (!(delta_is_preact && i == static_cast<int>(w.size()) - 1)) {
      delta = (preacts[i].array() > 0.0).cast<double>() * delta.array();
    }
    grad_w[i] = delta * acts[i].transpose();
    grad_b[i] = delta.rowwise().sum();
    if (i > 0 || grad_input != nullptr) {
      Eigen::MatrixXd next = w[i].transpose() * delta;
      if (i == 0) {
        *grad_input = next;
      } else {
        delta = std::move(next);
      }
    }
  }
}

double mean_cross_entropy(const Eigen::MatrixXd& probs,
                          const Eigen::VectorXi& labels) {
  double loss = 0.0;
  for (Eigen::Index n = 0; n < labels.size(); ++n) {
    loss -= std::log(std::max(probs(labels[n], n), 1e-300));
  }
  return loss / static_cast<double>(labels.size());
}

LocalModel zeros_like(const LocalModel& m) {
  LocalModel z;
  for (const auto& w : m.extractor_w) z.extractor_w.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  for (const auto& b : m.extractor_b) z.extractor_b.push_back(Eigen::VectorXd::Zero(b.size()));
  for (const auto& w : m.predictor_w) z.predictor_w.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  for (const auto& b : m.predictor_b) z.predictor_b.push_back(Eigen::VectorXd::Zero(b.size()));
  return z;
}

bool all_finite(const LocalModel& m) {
  auto ok = [](const Eigen::MatrixXd& x) { return x.allFinite(); };
  for (const auto& w : m.extractor_w) if (!ok(w)) return false;
  for (const auto& b : m.extractor_b) if (!b.allFinite()) return false;
  for (const auto& w : m.predictor_w) if (!ok(w)) return false;
  for (const auto& b : m.predictor_b) if (!b.allFinite()) return false;
  return true;
}

}  // namespace

KnowledgeMatrix KnowledgeMatrix::empty(int classes, int feature_dim) {
  KnowledgeMatrix k;
  k.prototypes = Eigen::MatrixXd::Zero(classes, feature_dim);
  k.class_counts = Eigen::VectorXi::Zero(classes);
  return k;
}

std::vector<DatasetShard> partition_non_iid(const DatasetShard& dataset,
                                            int devices,
                                            int classes_per_device,
                                            uint64_t seed) {
  int classes = dataset.classes();
  if (classes_per_device > classes) {
    throw std::invalid_argument(
        "partition: classes_per_device exceeds the class count");
  }
  long folds = static_cast<long>(classes_per_device) * devices;
  if (folds % classes != 0) {
    throw std::invalid_argument(
        "partition: classes_per_device*devices must be divisible by the "
        "class count");
  }
  long shards_per_class = folds / classes;

  // Per-class index lists in dataset order.
  std::vector<std::vector<long>> by_class(classes);
  for (long n = 0; n < dataset.size(); ++n) {
    by_class[dataset.labels[n]].push_back(n);
  }

  // Slice every class into equal shards; the remainder joins the last one.
  struct Slice {
    int cls;
    long begin, end;
  };
  std::vector<Slice> slices;
  for (int c = 0; c < classes; ++c) {
    long count = static_cast<long>(by_class[c].size());
    long base = count / shards_per_class;
    for (long s = 0; s < shards_per_class; ++s) {
      long begin = s * base;
      long end = (s + 1 == shards_per_class) ? count : begin + base;
      slices.push_back({c, begin, end});
    }
  }

  RngStream stream(seed, RngTag::kPartition);
  for (size_t i = slices.size(); i > 1; --i) {
    size_t j = stream.below(i);
    std::swap(slices[i - 1], slices[j]);
  }

  std::vector<DatasetShard> out(devices);
  int d = dataset.features.rows() == 0 ? 0 : static_cast<int>(dataset.features.rows());
  for (int k = 0; k < devices; ++k) {
    std::vector<long> mine;
    for (int s = 0; s < classes_per_device; ++s) {
      const Slice& sl = slices[static_cast<size_t>(k) * classes_per_device + s];
      for (long i = sl.begin; i < sl.end; ++i) {
        mine.push_back(by_class[sl.cls][i]);
      }
    }
    std::sort(mine.begin(), mine.end());
    DatasetShard shard;
    shard.features.resize(d, static_cast<long>(mine.size()));
    shard.labels.resize(static_cast<long>(mine.size()));
    shard.per_class_counts = Eigen::VectorXi::Zero(classes);
    for (size_t i = 0; i < mine.size(); ++i) {
      shard.features.col(static_cast<long>(i)) = dataset.features.col(mine[i]);
      shard.labels[static_cast<long>(i)] = dataset.labels[mine[i]];
      shard.per_class_counts[dataset.labels[mine[i]]] += 1;
    }
    out[k] = std::move(shard);
  }
  return out;
}

Eigen::MatrixXd extract_features(const LocalModel& model,
                                 const Eigen::MatrixXd& inputs) {
  std::vector<Eigen::MatrixXd> pre, act;
  forward_stack(model.extractor_w, model.extractor_b, inputs, true, pre, act);
  return act.back();
}

Eigen::MatrixXd predict_probs(const LocalModel& model,
                              const Eigen::MatrixXd& inputs) {
  return run_forward(model, inputs).probs;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> forward(const LocalModel& model,
                                                    const Eigen::VectorXd& x) {
  ForwardPass fp = run_forward(model, x);
  return {fp.ext_act.back().col(0), fp.probs.col(0)};
}

double empirical_loss(const LocalModel& model, const DatasetShard& shard) {
  return mean_cross_entropy(predict_probs(model, shard.features),
                            shard.labels);
}

double global_loss(const std::vector<LocalModel>& models,
                   const std::vector<DatasetShard>& shards) {
  double total = 0.0;
  double weighted = 0.0;
  for (size_t k = 0; k < models.size(); ++k) {
    double dk = static_cast<double>(shards[k].size());
    weighted += dk * empirical_loss(models[k], shards[k]);
    total += dk;
  }
  return weighted / total;
}

double knowledge_loss(const LocalModel& model, const DatasetShard& shard,
                      const KnowledgeMatrix& global_know, long* uncovered) {
  Eigen::MatrixXd features = extract_features(model, shard.features);
  double loss = 0.0;
  long missing = 0;
  for (Eigen::Index n = 0; n < shard.labels.size(); ++n) {
    int c = shard.labels[n];
    if (!global_know.has_class(c)) {
      ++missing;
      continue;
    }
    loss += 0.5 * (features.col(n) -
                   global_know.prototypes.row(c).transpose())
                      .squaredNorm();
  }
  if (uncovered != nullptr) *uncovered = missing;
  return loss / static_cast<double>(shard.size());
}

LossGradients loss_and_gradients(const LocalModel& model,
                                 const DatasetShard& shard,
                                 const KnowledgeMatrix& global_know,
                                 double lambda) {
  ForwardPass fp = run_forward(model, shard.features);
  long n = shard.size();
  double inv_n = 1.0 / static_cast<double>(n);

  LossGradients out;
  out.grad = zeros_like(model);
  out.empirical_loss = mean_cross_entropy(fp.probs, shard.labels);

  // dF/dlogits = (probs - onehot)/N
  Eigen::MatrixXd dlogits = fp.probs;
  for (Eigen::Index i = 0; i < n; ++i) dlogits(shard.labels[i], i) -= 1.0;
  dlogits *= inv_n;

  Eigen::MatrixXd dfeature;
  backward_stack(model.predictor_w, fp.pred_pre, fp.pred_act, dlogits,
                 /*delta_is_preact=*/true, out.grad.predictor_w,
                 out.grad.predictor_b, &dfeature);

  // Knowledge term: dL/dh_n = (h_n - Omega_{y_n})/D_k for covered samples.
  if (lambda != 0.0) {
    const Eigen::MatrixXd& features = fp.ext_act.back();
    for (Eigen::Index i = 0; i < n; ++i) {
      int c = shard.labels[i];
      if (!global_know.has_class(c)) {
        ++out.uncovered_samples;
        continue;
      }
      Eigen::VectorXd diff =
          features.col(i) - global_know.prototypes.row(c).transpose();
      out.knowledge_loss += 0.5 * diff.squaredNorm();
      dfeature.col(i) += lambda * inv_n * diff;
    }
    out.knowledge_loss *= inv_n;
  }

  backward_stack(model.extractor_w, fp.ext_pre, fp.ext_act, dfeature,
                 /*delta_is_preact=*/false, out.grad.extractor_w,
                 out.grad.extractor_b, nullptr);
  return out;
}

LocalModel local_update(const LocalModel& model, const DatasetShard& shard,
                        const KnowledgeMatrix& global_know,
                        const HyperParams& hp) {
  LocalModel m = model;
  LocalModel vel = zeros_like(model);
  for (int step = 0; step < hp.local_iters; ++step) {
    LossGradients g =
        loss_and_gradients(m, shard, global_know, hp.knowledge_weight);
    if (!all_finite(g.grad)) {
      throw std::runtime_error(
          "local_update: non-finite gradient at local step " +
          std::to_string(step) + " (empirical loss " +
          std::to_string(g.empirical_loss) + ")");
    }
    for (size_t i = 0; i < m.extractor_w.size(); ++i) {
      vel.extractor_w[i] = hp.momentum * vel.extractor_w[i] + g.grad.extractor_w[i];
      vel.extractor_b[i] = hp.momentum * vel.extractor_b[i] + g.grad.extractor_b[i];
      m.extractor_w[i] -= hp.lr_extractor * vel.extractor_w[i];
      m.extractor_b[i] -= hp.lr_extractor * vel.extractor_b[i];
    }
    for (size_t i = 0; i < m.predictor_w.size(); ++i) {
      vel.predictor_w[i] = hp.momentum * vel.predictor_w[i] + g.grad.predictor_w[i];
      vel.predictor_b[i] = hp.momentum * vel.predictor_b[i] + g.grad.predictor_b[i];
      m.predictor_w[i] -= hp.lr_predictor * vel.predictor_w[i];
      m.predictor_b[i] -= hp.lr_predictor * vel.predictor_b[i];
    }
  }
  return m;
}

KnowledgeMatrix compute_knowledge(const LocalModel& model,
                                  const DatasetShard& shard) {
  if (shard.size() == 0) {
    throw std::invalid_argument("compute_knowledge: empty shard");
  }
  KnowledgeMatrix know =
      KnowledgeMatrix::empty(shard.classes(), model.feature_dim());
  Eigen::MatrixXd features = extract_features(model, shard.features);
  for (Eigen::Index n = 0; n < shard.labels.size(); ++n) {
    int c = shard.labels[n];
    know.prototypes.row(c) += features.col(n).transpose();
    know.class_counts[c] += 1;
  }
  for (int c = 0; c < shard.classes(); ++c) {
    if (know.class_counts[c] > 0) {
      know.prototypes.row(c) /= static_cast<double>(know.class_counts[c]);
    }
  }
  return know;
}

KnowledgeMatrix aggregate_knowledge(const std::vector<KnowledgeMatrix>& locals,
                                    const KnowledgeMatrix* previous) {
  if (locals.empty()) {
    throw std::invalid_argument("aggregate_knowledge: no contributors");
  }
  int classes = static_cast<int>(locals.front().class_counts.size());
  int dim = static_cast<int>(locals.front().prototypes.cols());
  KnowledgeMatrix out = KnowledgeMatrix::empty(classes, dim);
  for (int c = 0; c < classes; ++c) {
    long total = 0;
    for (const auto& k : locals) total += k.class_counts[c];
    if (total == 0) {
      if (previous != nullptr && previous->has_class(c)) {
        out.prototypes.row(c) = previous->prototypes.row(c);
        out.class_counts[c] = previous->class_counts[c];
      }
      continue;
    }
    for (const auto& k : locals) {
      if (k.class_counts[c] == 0) continue;
      out.prototypes.row(c) +=
          static_cast<double>(k.class_counts[c]) * k.prototypes.row(c);
    }
    out.prototypes.row(c) /= static_cast<double>(total);
    out.class_counts[c] = static_cast<int>(total);
  }
  return out;
}

double evaluate_accuracy(const std::vector<LocalModel>& models,
                         const std::vector<DatasetShard>& test_shards) {
  long correct = 0;
  long total = 0;
  for (size_t k = 0; k < models.size(); ++k) {
    const DatasetShard& shard = test_shards[k];
    if (shard.size() == 0) continue;
    Eigen::MatrixXd probs = predict_probs(models[k], shard.features);
    for (Eigen::Index n = 0; n < shard.labels.size(); ++n) {
      Eigen::Index pred;
      probs.col(n).maxCoeff(&pred);
      if (pred == shard.labels[n]) ++correct;
    }
    total += shard.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / total;
}

void run_kfl_round(FederationState& state,
                   const std::vector<DatasetShard>& shards,
                   const std::vector<int>& scheduled, const HyperParams& hp) {
  if (scheduled.empty()) return;
  // Device-id order fixes the floating-point reduction order no matter how
  // the scheduler ordered the set.
  std::vector<int> order = scheduled;
  std::sort(order.begin(), order.end());
  std::vector<KnowledgeMatrix> uploads;
  uploads.reserve(order.size());
  for (int k : order) {
    state.models[k] =
        local_update(state.models[k], shards[k], state.global_knowledge, hp);
    uploads.push_back(compute_knowledge(state.models[k], shards[k]));
  }
  state.global_knowledge =
      aggregate_knowledge(uploads, &state.global_knowledge);
}

LocalModel init_model(int input_dim, const std::vector<int>& hidden_dims,
                      int feature_dim, int classes, uint64_t seed,
                      int device) {
  RngStream stream(seed, RngTag::kWeights, static_cast<uint64_t>(device));
  auto init_layer = [&stream](int out, int in, Eigen::MatrixXd& w,
                              Eigen::VectorXd& b) {
    double a = std::sqrt(6.0 / (in + out));
    w.resize(out, in);
    for (int i = 0; i < out; ++i) {
      for (int j = 0; j < in; ++j) w(i, j) = stream.uniform(-a, a);
    }
    b = Eigen::VectorXd::Zero(out);
  };

  LocalModel m;
  int in = input_dim;
  for (int width : hidden_dims) {
    Eigen::MatrixXd w;
    Eigen::VectorXd b;
    init_layer(width, in, w, b);
    m.extractor_w.push_back(std::move(w));
    m.extractor_b.push_back(std::move(b));
    in = width;
  }
  {
    Eigen::MatrixXd w;
    Eigen::VectorXd b;
    init_layer(feature_dim, in, w, b);
    m.extractor_w.push_back(std::move(w));
    m.extractor_b.push_back(std::move(b));
  }
  {
    Eigen::MatrixXd w;
    Eigen::VectorXd b;
    init_layer(classes, feature_dim, w, b);
    m.predictor_w.push_back(std::move(w));
    m.predictor_b.push_back(std::move(b));
  }
  return m;
}

namespace {

uint32_t read_be32(std::ifstream& in, const std::string& path) {
  unsigned char buf[4];
  if (!in.read(reinterpret_cast<char*>(buf), 4)) {
    throw std::runtime_error("idx: truncated header in " + path);
  }
  return (uint32_t(buf[0]) << 24) | (uint32_t(buf[1]) << 16) |
         (uint32_t(buf[2]) << 8) | uint32_t(buf[3]);
}

}  // namespace

DatasetShard load_mnist_idx(const std::string& images_path,
                            const std::string& labels_path, int classes) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("idx: cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("idx: cannot open " + labels_path);

  if (read_be32(img, images_path) != 0x00000803u) {
    throw std::runtime_error("idx: bad image magic in " + images_path);
  }
  if (read_be32(lab, labels_path) != 0x00000801u) {
    throw std::runtime_error("idx: bad label magic in " + labels_path);
  }
  uint32_t count = read_be32(img, images_path);
  uint32_t rows = read_be32(img, images_path);
  uint32_t cols = read_be32(img, images_path);
  uint32_t label_count = read_be32(lab, labels_path);
  if (count != label_count) {
    throw std::runtime_error("idx: image/label count mismatch");
  }

  long dim = static_cast<long>(rows) * cols;
  DatasetShard shard;
  shard.features.resize(dim, count);
  shard.labels.resize(count);
  shard.per_class_counts = Eigen::VectorXi::Zero(classes);

  std::vector<unsigned char> pixel(dim);
  for (uint32_t n = 0; n < count; ++n) {
    if (!img.read(reinterpret_cast<char*>(pixel.data()), dim)) {
      throw std::runtime_error("idx: truncated image data in " + images_path);
    }
    for (long i = 0; i < dim; ++i) {
      shard.features(i, n) = pixel[i] / 255.0;
    }
    char l;
    if (!lab.read(&l, 1)) {
      throw std::runtime_error("idx: truncated label data in " + labels_path);
    }
    int cls = static_cast<unsigned char>(l);
    if (cls >= classes) {
      throw std::runtime_error("idx: label out of range");
    }
    shard.labels[n] = cls;
    shard.per_class_counts[cls] += 1;
  }
  return shard;
}

}  // namespace kfl
