#include "wig/wdl.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>

#include "wig/binary_io.hpp"

namespace wig {

namespace fs = std::filesystem;

namespace {

constexpr double kLossFloor = 1e-12;

void check_simplex_columns(const Matrix& m, const char* what) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if (!m.col(j).allFinite() || std::abs(m.col(j).sum() - 1.0) > 1e-9)
      throw NumericalError(std::string(what) + ": column " + std::to_string(j) + " left the simplex");
  }
}

}  // namespace

Matrix softmax_columns(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mx = x.col(j).maxCoeff();
    out.col(j) = (x.col(j).array() - mx).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

Matrix softmax_columns_backward(const Matrix& softmax, const Matrix& upstream) {
  Matrix out(softmax.rows(), softmax.cols());
  for (Eigen::Index j = 0; j < softmax.cols(); ++j) {
    const double inner = softmax.col(j).dot(upstream.col(j));
    out.col(j) = softmax.col(j).cwiseProduct((upstream.col(j).array() - inner).matrix());
  }
  return out;
}

Matrix DictionaryModel::topics() const { return softmax_columns(R); }
Matrix DictionaryModel::weights() const { return softmax_columns(A); }

void DictionaryModel::save(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  binary::write_magic(out, "WIGM");
  binary::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(R.rows()));
  binary::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(R.cols()));
  binary::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(A.cols()));
  binary::write_pod<double>(out, epsilon);
  binary::write_matrix(out, R);
  binary::write_matrix(out, A);
}

DictionaryModel DictionaryModel::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string what = path.string();
  binary::expect_magic(in, "WIGM", what);
  const auto n = binary::read_pod<std::uint32_t>(in, what);
  const auto k = binary::read_pod<std::uint32_t>(in, what);
  const auto m = binary::read_pod<std::uint32_t>(in, what);
  DictionaryModel model;
  model.epsilon = binary::read_pod<double>(in, what);
  model.R = binary::read_matrix(in, n, k, what);
  model.A = binary::read_matrix(in, k, m, what);
  if (in.peek() != std::char_traits<char>::eof()) throw ValidationError(what + ": trailing bytes after model");
  return model;
}

DictionaryModel init_model(std::size_t n_eff, std::size_t m, std::size_t k, std::uint64_t seed) {
  require(k >= 1, "init_model: K must be >= 1");
  require(n_eff >= 2, "init_model: vocabulary must have at least 2 tokens");
  require(m >= 1, "init_model: need at least one document");
  Rng rng(seed);
  DictionaryModel model;
  model.seed = seed;
  model.R.resize(static_cast<Eigen::Index>(n_eff), static_cast<Eigen::Index>(k));
  model.A.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
  for (Eigen::Index i = 0; i < model.R.rows(); ++i)
    for (Eigen::Index j = 0; j < model.R.cols(); ++j) model.R(i, j) = rng.normal();
  for (Eigen::Index i = 0; i < model.A.rows(); ++i)
    for (Eigen::Index j = 0; j < model.A.cols(); ++j) model.A(i, j) = rng.normal();
  return model;
}

double reconstruction_loss(const Vector& y, const Vector& y_hat, LossKind kind) {
  require(y.size() == y_hat.size(), "reconstruction_loss: length mismatch");
  if (kind == LossKind::squared) return 0.5 * (y - y_hat).squaredNorm();
  double s = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] <= 0.0) continue;
    s += y[i] * (std::log(y[i]) - std::log(std::max(y_hat[i], kLossFloor)));
  }
  return std::max(s, 0.0);
}

Vector reconstruction_loss_grad(const Vector& y, const Vector& y_hat, LossKind kind) {
  require(y.size() == y_hat.size(), "reconstruction_loss: length mismatch");
  if (kind == LossKind::squared) return y_hat - y;
  Vector g = Vector::Zero(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (y[i] > 0.0 && y_hat[i] > kLossFloor) g[i] = -y[i] / y_hat[i];
  return g;
}

AdamState::AdamState(Eigen::Index rows, Eigen::Index cols, double lr_, double weight_decay_)
    : lr(lr_), weight_decay(weight_decay_), m_(Matrix::Zero(rows, cols)), v_(Matrix::Zero(rows, cols)) {}

void AdamState::step(Matrix& param, const Matrix& grad) {
  require(param.rows() == m_.rows() && param.cols() == m_.cols() && grad.rows() == m_.rows() && grad.cols() == m_.cols(),
          "adam: shape mismatch");
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (Eigen::Index j = 0; j < param.cols(); ++j) {
    for (Eigen::Index i = 0; i < param.rows(); ++i) {
      const double g = grad(i, j) + weight_decay * param(i, j);
      m_(i, j) = beta1 * m_(i, j) + (1.0 - beta1) * g;
      v_(i, j) = beta2 * v_(i, j) + (1.0 - beta2) * g * g;
      param(i, j) -= lr * (m_(i, j) / c1) / (std::sqrt(v_(i, j) / c2) + eps_hat);
    }
  }
}

DataSplit make_split(std::size_t m, double train_frac, double eval_frac, std::uint64_t seed) {
  require(train_frac > 0.0 && eval_frac >= 0.0 && train_frac + eval_frac <= 1.0 + 1e-12, "make_split: bad fractions");
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(m) * train_frac + 1e-9));
  const auto n_eval = static_cast<std::size_t>(std::floor(static_cast<double>(m) * eval_frac + 1e-9));
  DataSplit split;
  split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.eval.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                    order.begin() + static_cast<std::ptrdiff_t>(std::min(m, n_train + n_eval)));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(std::min(m, n_train + n_eval)), order.end());
  if (split.train.empty()) throw ValidationError("make_split: empty train split");
  if (eval_frac > 0.0 && split.eval.empty()) throw ValidationError("make_split: empty eval split");
  return split;
}

double document_loss(const Matrix& topics, const Vector& weights, const Vector& doc,
                     std::shared_ptr<const GibbsKernel> kernel, const SinkhornConfig& cfg, LossKind loss) {
  require(kernel != nullptr, "document_loss: null kernel");
  const Vector y_hat = sinkhorn_barycenter_recorded(topics, weights, std::move(kernel), cfg).barycenter;
  return reconstruction_loss(doc, y_hat, loss);
}

LossAndGrad batch_loss_and_grad(const DictionaryModel& model, std::span<const Vector> docs,
                                std::span<const std::size_t> batch, std::shared_ptr<const GibbsKernel> kernel,
                                const SinkhornConfig& cfg, LossKind loss, std::size_t threads) {
  require(!batch.empty(), "batch_loss_and_grad: empty batch");
  require(kernel != nullptr && kernel->dim() == model.n_tokens(), "batch_loss_and_grad: cost matrix does not match model");
  const Matrix t = model.topics();
  const Eigen::Index k = model.R.cols();

  struct Slot {
    double loss = 0.0;
    Matrix grad_t;
    Vector grad_lambda;
    Vector lambda;
  };
  std::vector<Slot> slots(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t b) {
    const std::size_t m = batch[b];
    require(m < docs.size() && static_cast<Eigen::Index>(m) < model.A.cols(), "batch_loss_and_grad: document index out of range");
    const Vector& y = docs[m];
    require(y.size() == t.rows(), "batch_loss_and_grad: document dimension does not match model");
    Slot& s = slots[b];
    s.lambda = softmax_columns(model.A.col(static_cast<Eigen::Index>(m)));
    auto fwd = sinkhorn_barycenter_recorded(t, s.lambda, kernel, cfg);
    s.loss = reconstruction_loss(y, fwd.barycenter, loss);
    auto g = barycenter_grad(fwd.tape, reconstruction_loss_grad(y, fwd.barycenter, loss));
    s.grad_t = std::move(g.topics);
    s.grad_lambda = std::move(g.weights);
  });

  const double scale = 1.0 / static_cast<double>(batch.size());
  LossAndGrad out;
  out.grad_A = Matrix::Zero(k, model.A.cols());
  Matrix grad_t = Matrix::Zero(t.rows(), k);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Slot& s = slots[b];
    out.loss += s.loss * scale;
    grad_t += s.grad_t * scale;
    const auto col = static_cast<Eigen::Index>(batch[b]);
    const Vector gl = s.grad_lambda * scale;
    out.grad_A.col(col) += s.lambda.cwiseProduct((gl.array() - s.lambda.dot(gl)).matrix());
  }
  out.grad_R = softmax_columns_backward(t, grad_t);
  return out;
}

namespace {

// Adam on selected columns of A with the topics held fixed.
double fit_columns(DictionaryModel& model, std::span<const Vector> docs, std::span<const std::size_t> cols,
                   std::shared_ptr<const GibbsKernel> kernel, const SinkhornConfig& cfg, LossKind loss,
                   std::size_t steps, double lr, std::vector<AdamState>& states, std::size_t threads) {
  const Matrix t = model.topics();
  const Eigen::Index k = model.A.rows();
  std::vector<double> losses(cols.size(), 0.0);
  parallel_for(cols.size(), threads, [&](std::size_t c) {
    const auto m = static_cast<Eigen::Index>(cols[c]);
    Matrix a = model.A.col(m);
    AdamState& st = states[c];
    if (st.steps() == 0 && st.first_moment().size() == 0) st = AdamState(k, 1, lr);
    for (std::size_t s = 0; s < steps; ++s) {
      const Vector lambda = softmax_columns(a);
      auto fwd = sinkhorn_barycenter_recorded(t, lambda, kernel, cfg);
      auto g = barycenter_grad(fwd.tape, reconstruction_loss_grad(docs[cols[c]], fwd.barycenter, loss));
      st.step(a, softmax_columns_backward(lambda, g.weights));
    }
    model.A.col(m) = a;
    const Vector lambda = softmax_columns(a);
    losses[c] = reconstruction_loss(docs[cols[c]], sinkhorn_barycenter_recorded(t, lambda, kernel, cfg).barycenter, loss);
  });
  double total = 0.0;
  for (double l : losses) total += l;
  return cols.empty() ? 0.0 : total / static_cast<double>(cols.size());
}

}  // namespace

TrainResult train(DictionaryModel model, std::span<const Vector> docs, const CostMatrix& cost,
                  const TrainConfig& cfg, const DataSplit& split) {
  const auto started = std::chrono::steady_clock::now();
  cfg.sinkhorn.validate();
  require(cfg.batch_size >= 1, "train: batch_size must be >= 1");
  require(cfg.epochs >= 1, "train: epochs must be >= 1");
  require(cfg.lr > 0.0, "train: lr must be > 0");
  require(docs.size() == model.documents(), "train: model has " + std::to_string(model.documents()) +
                                                " weight columns but " + std::to_string(docs.size()) + " documents were given");
  require(cost.dim() == model.n_tokens(), "train: cost matrix dimension does not match the model vocabulary");
  if (split.train.empty()) throw ValidationError("train: empty train split");
  for (const auto& y : docs) {
    require(y.size() == static_cast<Eigen::Index>(model.n_tokens()), "train: document dimension does not match model");
    require(std::abs(y.sum() - 1.0) <= 1e-9 && (y.array() >= 0.0).all(), "train: documents must lie on the simplex");
  }

  model.epsilon = cfg.sinkhorn.epsilon;
  auto kernel = std::make_shared<const GibbsKernel>(cost, cfg.sinkhorn.epsilon);
  AdamState adam_r(model.R.rows(), model.R.cols(), cfg.lr, cfg.weight_decay);
  AdamState adam_a(model.A.rows(), model.A.cols(), cfg.lr, cfg.weight_decay);
  std::vector<AdamState> eval_states(split.eval.size());
  Rng shuffle_rng(cfg.seed);

  TrainResult result;
  TrainReport& report = result.report;
  DictionaryModel best = model;
  double best_eval = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::size_t> order = split.train;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      std::span<const std::size_t> batch(order.data() + lo, hi - lo);
      const DictionaryModel last_good = model;
      LossAndGrad lg = batch_loss_and_grad(model, docs, batch, kernel, cfg.sinkhorn, cfg.loss, cfg.threads);
      if (!std::isfinite(lg.loss) || !lg.grad_R.allFinite() || !lg.grad_A.allFinite())
        throw TrainingAborted("train: non-finite loss in epoch " + std::to_string(epoch), last_good);
      adam_r.step(model.R, lg.grad_R);
      adam_a.step(model.A, lg.grad_A);
      if (!model.R.allFinite() || !model.A.allFinite())
        throw TrainingAborted("train: non-finite parameters in epoch " + std::to_string(epoch), last_good);
      loss_sum += lg.loss * static_cast<double>(batch.size());
    }
    check_simplex_columns(model.topics(), "train: topic matrix");
    check_simplex_columns(model.weights(), "train: weight matrix");

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    if (!split.eval.empty()) {
      stats.eval_loss = fit_columns(model, docs, split.eval, kernel, cfg.sinkhorn, cfg.loss, cfg.eval_fit_steps,
                                    cfg.infer.lr, eval_states, cfg.threads);
    } else {
      stats.eval_loss = stats.train_loss;
    }
    if (!std::isfinite(stats.eval_loss)) throw TrainingAborted("train: non-finite eval loss", best);
    report.epochs.push_back(stats);

    if (stats.eval_loss < best_eval) {
      best_eval = stats.eval_loss;
      best = model;
      report.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      report.early_stopped = true;
      break;
    }
  }

  model = std::move(best);
  // Held-out documents get weights fitted with the final topics.
  std::vector<std::size_t> held_out = split.eval;
  held_out.insert(held_out.end(), split.test.begin(), split.test.end());
  for (std::size_t idx = 0; idx < held_out.size(); ++idx) {
    const std::size_t m = held_out[idx];
    model.A.col(static_cast<Eigen::Index>(m)) =
        infer_logits(model, docs[m], kernel, cfg.sinkhorn, cfg.infer, cfg.seed + m, cfg.loss);
  }
  if (!split.test.empty()) {
    const Matrix t = model.topics();
    double s = 0.0;
    for (std::size_t m : split.test)
      s += document_loss(t, softmax_columns(model.A.col(static_cast<Eigen::Index>(m))), docs[m], kernel, cfg.sinkhorn, cfg.loss);
    report.test_loss = s / static_cast<double>(split.test.size());
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  result.model = std::move(model);
  return result;
}

Vector infer_logits(const DictionaryModel& model, const Vector& doc, std::shared_ptr<const GibbsKernel> kernel,
                    const SinkhornConfig& cfg, const InferConfig& infer, std::uint64_t seed, LossKind loss) {
  require(kernel != nullptr && kernel->dim() == model.n_tokens(), "infer_weights: cost matrix does not match model");
  require(doc.size() == static_cast<Eigen::Index>(model.n_tokens()), "infer_weights: document dimension does not match model");
  const Matrix t = model.topics();
  const Eigen::Index k = model.R.cols();
  Rng rng(seed);
  Matrix a(k, 1);
  for (Eigen::Index i = 0; i < k; ++i) a(i, 0) = 0.01 * rng.normal();
  AdamState adam(k, 1, infer.lr);
  for (std::size_t s = 0; s < infer.steps; ++s) {
    const Vector lambda = softmax_columns(a);
    auto fwd = sinkhorn_barycenter_recorded(t, lambda, kernel, cfg);
    const double l = reconstruction_loss(doc, fwd.barycenter, loss);
    if (!std::isfinite(l)) throw NumericalError("infer_weights: non-finite loss");
    auto g = barycenter_grad(fwd.tape, reconstruction_loss_grad(doc, fwd.barycenter, loss));
    adam.step(a, softmax_columns_backward(lambda, g.weights));
  }
  return a.col(0);
}

Vector infer_weights(const DictionaryModel& model, const Vector& doc, const CostMatrix& cost,
                     const SinkhornConfig& cfg, const InferConfig& infer, std::uint64_t seed, LossKind loss) {
  auto kernel = std::make_shared<const GibbsKernel>(cost, cfg.epsilon);
  return softmax_columns(infer_logits(model, doc, kernel, cfg, infer, seed, loss));
}

}  // namespace wig
