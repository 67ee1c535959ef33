#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "wig/common.hpp"
#include "wig/ot.hpp"

namespace wig {

/// Free parameters of the dictionary. Topics are softmax(R) column-wise
/// (N_eff x K), document weights softmax(A) column-wise (K x M).
struct DictionaryModel {
  Matrix R;
  Matrix A;
  double epsilon = 0.1;
  std::uint64_t seed = 0;

  std::size_t n_tokens() const { return static_cast<std::size_t>(R.rows()); }
  std::size_t topics_count() const { return static_cast<std::size_t>(R.cols()); }
  std::size_t documents() const { return static_cast<std::size_t>(A.cols()); }

  Matrix topics() const;
  Matrix weights() const;

  /// Binary container: magic "WIGM", u32 N_eff, u32 K, u32 M, f64 epsilon,
  /// then R and A row-major little-endian f64.
  void save(const std::filesystem::path& path) const;
  static DictionaryModel load(const std::filesystem::path& path);
};

/// Entries i.i.d. standard normal, R first then A, both row-major.
DictionaryModel init_model(std::size_t n_eff, std::size_t m, std::size_t k, std::uint64_t seed);

/// Max-subtracted softmax of every column.
Matrix softmax_columns(const Matrix& x);

/// Pulls a gradient w.r.t. softmax(x) back to x, column by column.
Matrix softmax_columns_backward(const Matrix& softmax, const Matrix& upstream);

enum class LossKind { kl, squared };

/// KL(y || y_hat) with y_hat floored at 1e-12, or 0.5 * ||y - y_hat||^2.
double reconstruction_loss(const Vector& y, const Vector& y_hat, LossKind kind = LossKind::kl);
Vector reconstruction_loss_grad(const Vector& y, const Vector& y_hat, LossKind kind = LossKind::kl);

class AdamState {
public:
  AdamState() = default;
  AdamState(Eigen::Index rows, Eigen::Index cols, double lr, double weight_decay = 0.0);

  /// One Adam step on `param` (L2 weight decay folded into the gradient).
  void step(Matrix& param, const Matrix& grad);

  std::size_t steps() const { return step_; }
  const Matrix& first_moment() const { return m_; }
  const Matrix& second_moment() const { return v_; }

  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
  double weight_decay = 0.0;

private:
  Matrix m_;
  Matrix v_;
  std::size_t step_ = 0;
};

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
  std::vector<std::size_t> test;
};

/// Seeded random split by document; sizes floor(M * train_frac),
/// floor(M * eval_frac), remainder.
DataSplit make_split(std::size_t m, double train_frac, double eval_frac, std::uint64_t seed);

struct InferConfig {
  std::size_t steps = 200;
  double lr = 0.05;
};

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  double lr = 0.001;
  double weight_decay = 0.0;
  SinkhornConfig sinkhorn;
  LossKind loss = LossKind::kl;
  /// Early stop after this many epochs without eval-loss improvement; 0 disables.
  std::size_t patience = 10;
  /// Adam steps per epoch on held-out eval columns (T frozen) before scoring.
  std::size_t eval_fit_steps = 10;
  InferConfig infer;
  std::uint64_t seed = 0;  // shuffling substream
  std::size_t threads = 1;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double eval_loss = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double test_loss = 0.0;
  double wall_seconds = 0.0;
  bool early_stopped = false;
};

struct TrainResult {
  DictionaryModel model;
  TrainReport report;
};

/// Thrown when the loss turns non-finite; carries the last good model.
class TrainingAborted : public NumericalError {
public:
  TrainingAborted(const std::string& what, DictionaryModel last_good)
      : NumericalError(what), last_good_model(std::move(last_good)) {}
  DictionaryModel last_good_model;
};

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad_R;
  Matrix grad_A;  // non-zero only in the batch columns
};

/// Mean reconstruction loss over `batch` and its gradient w.r.t. R and A.
LossAndGrad batch_loss_and_grad(const DictionaryModel& model, std::span<const Vector> docs,
                                std::span<const std::size_t> batch, std::shared_ptr<const GibbsKernel> kernel,
                                const SinkhornConfig& cfg, LossKind loss = LossKind::kl, std::size_t threads = 1);

double document_loss(const Matrix& topics, const Vector& weights, const Vector& doc,
                     std::shared_ptr<const GibbsKernel> kernel, const SinkhornConfig& cfg, LossKind loss);

/// Trains R on the train split, updating the whole A matrix after every
/// batch. Columns of A for held-out documents are refit with the topics
/// frozen at the end, so the returned model covers every document.
TrainResult train(DictionaryModel model, std::span<const Vector> docs, const CostMatrix& cost,
                  const TrainConfig& cfg, const DataSplit& split);

/// Fits a fresh weight column for `doc` with the topics frozen. Returns the
/// logits; softmax gives the weights.
Vector infer_logits(const DictionaryModel& model, const Vector& doc, std::shared_ptr<const GibbsKernel> kernel,
                    const SinkhornConfig& cfg, const InferConfig& infer, std::uint64_t seed,
                    LossKind loss = LossKind::kl);

Vector infer_weights(const DictionaryModel& model, const Vector& doc, const CostMatrix& cost,
                     const SinkhornConfig& cfg, const InferConfig& infer, std::uint64_t seed,
                     LossKind loss = LossKind::kl);

}  // namespace wig
