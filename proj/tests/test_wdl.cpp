#include <doctest.h>

#include <cmath>
#include <memory>
#include <numeric>
#include <set>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "scratch.hpp"
#include "wig/wdl.hpp"

using namespace wig;

namespace {

Vector v2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

double tv(const Vector& a, const Vector& b) { return 0.5 * (a - b).cwiseAbs().sum(); }

double max_rel_coord_error(const Matrix& got, const Matrix& want) {
  double worst = 0.0;
  const double scale = want.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < got.size(); ++i) {
    const double denom = std::max(std::abs(want.data()[i]), 1e-3 * scale);
    worst = std::max(worst, std::abs(got.data()[i] - want.data()[i]) / denom);
  }
  return worst;
}

std::vector<std::size_t> all_of(std::size_t m) {
  std::vector<std::size_t> v(m);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

/// 5-token fixture with R, A drawn so that neither softmax is saturated.
DictionaryModel fixture_model() {
  DictionaryModel model = init_model(5, 3, 2, 31);
  model.R *= 0.5;
  model.A *= 0.5;
  return model;
}

}  // namespace

TEST_SUITE("wdl") {

TEST_CASE("init_model: deterministic, shapes, softmax on the simplex") {
  const auto a = init_model(25, 40, 4, 0);
  const auto b = init_model(25, 40, 4, 0);
  CHECK((a.R.array() == b.R.array()).all());
  CHECK((a.A.array() == b.A.array()).all());
  CHECK(a.R.rows() == 25);
  CHECK(a.R.cols() == 4);
  CHECK(a.A.rows() == 4);
  CHECK(a.A.cols() == 40);
  const auto c = init_model(25, 40, 4, 1);
  CHECK((c.R.array() != a.R.array()).any());
  for (const Matrix& s : {a.topics(), a.weights()})
    for (Eigen::Index j = 0; j < s.cols(); ++j) CHECK(std::abs(s.col(j).sum() - 1.0) <= 1e-12);
  // Standard normal draws: sample moments of the pooled 4000 entries.
  const auto big = init_model(400, 400, 5, 3);
  Vector pooled(big.R.size() + big.A.size());
  pooled << big.R.reshaped(), big.A.reshaped();
  CHECK(std::abs(pooled.mean()) < 0.05);
  CHECK(std::abs(std::sqrt((pooled.array() - pooled.mean()).square().mean()) - 1.0) < 0.05);
  CHECK_THROWS_AS(init_model(25, 40, 0, 0), ValidationError);
  CHECK_THROWS_AS(init_model(1, 40, 2, 0), ValidationError);
  CHECK_THROWS_AS(init_model(25, 0, 2, 0), ValidationError);
}

TEST_CASE("softmax_columns: symmetry, stability, shift invariance") {
  CHECK((softmax_columns(v2(0, 0)) - v2(0.5, 0.5)).cwiseAbs().maxCoeff() <= 1e-15);
  const Matrix big = softmax_columns(v2(1000, 0));
  CHECK(big.allFinite());
  CHECK(std::abs(big(0, 0) - 1.0) <= 1e-12);
  CHECK(big(1, 0) <= 1e-12);
  Rng rng(4);
  Matrix x(6, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 3.0 * rng.normal();
  Matrix shifted = x;
  shifted.col(1).array() += 123.4;
  CHECK((softmax_columns(x) - softmax_columns(shifted)).cwiseAbs().maxCoeff() <= 1e-12);
  const Matrix s = softmax_columns(x);
  for (Eigen::Index j = 0; j < 3; ++j) CHECK(std::abs(s.col(j).sum() - 1.0) <= 1e-12);
}

TEST_CASE("softmax_columns_backward matches finite differences") {
  Rng rng(5);
  Matrix x(4, 2), u(4, 2);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x.data()[i] = rng.normal();
    u.data()[i] = rng.normal();
  }
  auto f = [&](const Matrix& z) { return (softmax_columns(z).array() * u.array()).sum(); };
  const Matrix fd = oracle::central_differences(f, x, 1e-6);
  CHECK(oracle::relative_error(softmax_columns_backward(softmax_columns(x), u), fd) <= 1e-8);
}

TEST_CASE("reconstruction loss: identity, closed form, direct formula") {
  Rng rng(11);
  Vector y(7), yh(7);
  for (Eigen::Index i = 0; i < 7; ++i) {
    y[i] = rng.uniform();
    yh[i] = rng.uniform();
  }
  y /= y.sum();
  yh /= yh.sum();
  CHECK(reconstruction_loss(y, y) <= 1e-10);

  Vector point = v2(1.0 + 1e-12, 1e-12);
  point /= point.sum();
  CHECK(std::abs(reconstruction_loss(point, v2(0.5, 0.5)) - std::log(2.0)) <= 1e-3);

  double direct = 0.0;
  for (Eigen::Index i = 0; i < 7; ++i) direct += y[i] * std::log(y[i] / yh[i]);
  CHECK(std::abs(reconstruction_loss(y, yh) - direct) <= 1e-12);

  // Flooring keeps the loss finite when the reconstruction misses support.
  CHECK(std::isfinite(reconstruction_loss(v2(0.5, 0.5), v2(1.0, 0.0))));
  CHECK(reconstruction_loss(y, yh, LossKind::squared) == doctest::Approx(0.5 * (y - yh).squaredNorm()));

  auto f = [&](const Matrix& z) { return reconstruction_loss(y, z.col(0)); };
  const Matrix fd = oracle::central_differences(f, yh, 1e-7);
  CHECK(oracle::relative_error(reconstruction_loss_grad(y, yh), fd) <= 1e-6);
}

TEST_CASE("Adam: matches a direct implementation of the update") {
  AdamState adam(1, 2, 0.1, 0.01);
  Matrix p(1, 2);
  p << 1.0, -2.0;
  double m[2] = {0, 0}, v[2] = {0, 0}, q[2] = {1.0, -2.0};
  const double grads[3][2] = {{0.5, -1.0}, {0.2, 0.3}, {-0.7, 0.1}};
  for (int t = 1; t <= 3; ++t) {
    Matrix g(1, 2);
    g << grads[t - 1][0], grads[t - 1][1];
    adam.step(p, g);
    for (int i = 0; i < 2; ++i) {
      const double gi = grads[t - 1][i] + 0.01 * q[i];
      m[i] = 0.9 * m[i] + 0.1 * gi;
      v[i] = 0.999 * v[i] + 0.001 * gi * gi;
      q[i] -= 0.1 * (m[i] / (1 - std::pow(0.9, t))) / (std::sqrt(v[i] / (1 - std::pow(0.999, t))) + 1e-8);
    }
    CHECK(std::abs(p(0, 0) - q[0]) <= 1e-15);
    CHECK(std::abs(p(0, 1) - q[1]) <= 1e-15);
  }
  CHECK(adam.steps() == 3);
  CHECK_THROWS_AS(adam.step(p, Matrix::Zero(2, 2)), ValidationError);
}

TEST_CASE("make_split: 60/10/30, disjoint, deterministic") {
  const auto s = make_split(300, 0.6, 0.1, 8);
  CHECK(s.train.size() == 180);
  CHECK(s.eval.size() == 30);
  CHECK(s.test.size() == 90);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.eval.begin(), s.eval.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 300);
  CHECK(*all.rbegin() == 299);
  const auto again = make_split(300, 0.6, 0.1, 8);
  CHECK(again.train == s.train);
  CHECK(make_split(300, 0.6, 0.1, 9).train != s.train);
  CHECK_THROWS_AS(make_split(300, 0.0, 0.1, 1), ValidationError);
  CHECK_THROWS_AS(make_split(300, 0.8, 0.3, 1), ValidationError);
  CHECK_THROWS_AS(make_split(1, 0.6, 0.1, 1), ValidationError);
}

TEST_CASE("end-to-end gradient: R and A against central differences (5 tokens, K=2, 3 documents)") {
  const auto cost = fixture::five_token_cost();
  const auto docs = fixture::five_token_documents();
  const auto batch = all_of(3);
  for (bool log_domain : {false, true}) {
    SinkhornConfig cfg{0.1, 50};
    cfg.log_domain = log_domain;
    auto kernel = std::make_shared<const GibbsKernel>(cost, cfg.epsilon);
    const DictionaryModel model = fixture_model();
    const auto lg = batch_loss_and_grad(model, docs, batch, kernel, cfg);

    auto loss_r = [&](const Matrix& r) {
      DictionaryModel m = model;
      m.R = r;
      return batch_loss_and_grad(m, docs, batch, kernel, cfg).loss;
    };
    auto loss_a = [&](const Matrix& a) {
      DictionaryModel m = model;
      m.A = a;
      return batch_loss_and_grad(m, docs, batch, kernel, cfg).loss;
    };
    CHECK(max_rel_coord_error(lg.grad_R, oracle::central_differences(loss_r, model.R, 1e-5)) <= 1e-3);
    CHECK(max_rel_coord_error(lg.grad_A, oracle::central_differences(loss_a, model.A, 1e-5)) <= 1e-3);

    // Squared loss goes through the same chain.
    const auto sq = batch_loss_and_grad(model, docs, batch, kernel, cfg, LossKind::squared);
    auto sq_r = [&](const Matrix& r) {
      DictionaryModel m = model;
      m.R = r;
      return batch_loss_and_grad(m, docs, batch, kernel, cfg, LossKind::squared).loss;
    };
    CHECK(max_rel_coord_error(sq.grad_R, oracle::central_differences(sq_r, model.R, 1e-5)) <= 1e-3);
  }
}

TEST_CASE("batch gradient: only batch columns of A move; threads give identical sums") {
  const auto cost = fixture::five_token_cost();
  const auto docs = fixture::five_token_documents();
  SinkhornConfig cfg{0.1, 50};
  auto kernel = std::make_shared<const GibbsKernel>(cost, cfg.epsilon);
  const DictionaryModel model = fixture_model();
  const std::vector<std::size_t> batch{2, 0};
  const auto one = batch_loss_and_grad(model, docs, batch, kernel, cfg, LossKind::kl, 1);
  CHECK(one.grad_A.col(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(one.grad_A.col(0).cwiseAbs().maxCoeff() > 0.0);
  const auto two = batch_loss_and_grad(model, docs, batch, kernel, cfg, LossKind::kl, 2);
  CHECK(one.loss == two.loss);
  CHECK((one.grad_R.array() == two.grad_R.array()).all());
  CHECK((one.grad_A.array() == two.grad_A.array()).all());
}

TEST_CASE("loss is invariant under a joint topic permutation") {
  const auto cost = fixture::five_token_cost();
  const auto docs = fixture::five_token_documents();
  SinkhornConfig cfg{0.1, 50};
  auto kernel = std::make_shared<const GibbsKernel>(cost, cfg.epsilon);
  DictionaryModel model = init_model(5, 3, 3, 12);
  const auto base = batch_loss_and_grad(model, docs, all_of(3), kernel, cfg);
  DictionaryModel perm = model;
  const int order[3] = {2, 0, 1};
  for (int k = 0; k < 3; ++k) {
    perm.R.col(k) = model.R.col(order[k]);
    perm.A.row(k) = model.A.row(order[k]);
  }
  const auto moved = batch_loss_and_grad(perm, docs, all_of(3), kernel, cfg);
  CHECK(std::abs(moved.loss - base.loss) <= 1e-12);
  for (int k = 0; k < 3; ++k) CHECK((moved.grad_R.col(k) - base.grad_R.col(order[k])).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("train: deterministic, simplex columns, loss decreases, covers held-out documents") {
  const auto cost = fixture::five_token_cost();
  std::vector<Vector> docs;
  Rng rng(3);
  const Matrix t = fixture::five_token_topics();
  for (int m = 0; m < 40; ++m) {
    const double w = rng.uniform();
    docs.push_back(w * t.col(0) + (1 - w) * t.col(1));
  }
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 15;
  cfg.lr = 0.05;
  cfg.patience = 0;
  cfg.seed = 77;
  cfg.infer.steps = 50;
  const auto split = make_split(docs.size(), 0.6, 0.1, 5);
  const auto a = train(init_model(5, docs.size(), 2, 1), docs, cost, cfg, split);
  const auto b = train(init_model(5, docs.size(), 2, 1), docs, cost, cfg, split);
  REQUIRE(a.report.epochs.size() == 15);
  for (std::size_t e = 0; e < 15; ++e) {
    CHECK(a.report.epochs[e].train_loss == b.report.epochs[e].train_loss);
    CHECK(a.report.epochs[e].eval_loss == b.report.epochs[e].eval_loss);
  }
  CHECK(a.report.test_loss == b.report.test_loss);
  CHECK((a.model.R.array() == b.model.R.array()).all());
  CHECK((a.model.A.array() == b.model.A.array()).all());
  CHECK(a.report.epochs.back().train_loss < a.report.epochs.front().train_loss);
  CHECK(a.model.A.cols() == 40);
  CHECK(a.model.epsilon == cfg.sinkhorn.epsilon);
  for (const Matrix& s : {a.model.topics(), a.model.weights()})
    for (Eigen::Index j = 0; j < s.cols(); ++j) CHECK(std::abs(s.col(j).sum() - 1.0) <= 1e-12);

  cfg.threads = 3;
  const auto c = train(init_model(5, docs.size(), 2, 1), docs, cost, cfg, split);
  CHECK(c.report.epochs.back().train_loss == a.report.epochs.back().train_loss);
  CHECK((c.model.A.array() == a.model.A.array()).all());
}

TEST_CASE("train: published WIG and pWIG settings accepted, early stopping keeps the best epoch") {
  const auto cost = fixture::five_token_cost();
  const auto docs = fixture::five_token_documents();
  std::vector<Vector> many;
  for (int i = 0; i < 10; ++i) many.push_back(docs[static_cast<std::size_t>(i % 3)]);
  const auto split = make_split(many.size(), 0.6, 0.1, 2);

  TrainConfig wig_cfg;  // s = 32, lr = 0.001, eps = 0.1
  wig_cfg.epochs = 2;
  CHECK(wig_cfg.batch_size == 32);
  CHECK(wig_cfg.lr == 0.001);
  CHECK(wig_cfg.sinkhorn.epsilon == 0.1);
  CHECK_NOTHROW(train(init_model(5, many.size(), 4, 0), many, cost, wig_cfg, split));

  TrainConfig pwig_cfg;
  pwig_cfg.batch_size = 64;
  pwig_cfg.sinkhorn.epsilon = 0.08;
  pwig_cfg.epochs = 2;
  CHECK_NOTHROW(train(init_model(5, many.size(), 4, 0), many, cost, pwig_cfg, split));

  TrainConfig stop;
  stop.lr = 2.0;  // overshoots, so the eval loss stops improving
  stop.epochs = 60;
  stop.patience = 3;
  stop.eval_fit_steps = 1;
  const auto r = train(init_model(5, many.size(), 2, 0), many, cost, stop, split);
  if (r.report.early_stopped) {
    CHECK(r.report.epochs.size() == r.report.best_epoch + 3);
  }
  double best = 1e300;
  for (const auto& e : r.report.epochs) best = std::min(best, e.eval_loss);
  CHECK(r.report.epochs[r.report.best_epoch - 1].eval_loss == best);
}

TEST_CASE("train: input errors") {
  const auto cost = fixture::five_token_cost();
  auto docs = fixture::five_token_documents();
  const auto split = make_split(3, 0.6, 0.0, 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train(init_model(5, 4, 2, 0), docs, cost, cfg, split), ValidationError);
  CHECK_THROWS_AS(train(init_model(4, 3, 2, 0), docs, cost, cfg, split), ValidationError);
  CHECK_THROWS_AS(train(init_model(5, 3, 2, 0), docs, cost, cfg, DataSplit{}), ValidationError);
  auto bad = docs;
  bad[1][0] += 0.5;
  CHECK_THROWS_AS(train(init_model(5, 3, 2, 0), bad, cost, cfg, split), ValidationError);
  cfg.sinkhorn.epsilon = 1e-4;
  cfg.sinkhorn.log_domain = false;
  CHECK_THROWS_AS(train(init_model(5, 3, 2, 0), docs, cost, cfg, split), NumericalError);
}

TEST_CASE("infer_weights: simplex output, self-consistency, pure topic documents") {
  const auto cost = fixture::five_token_cost();
  const Matrix t = fixture::five_token_topics();
  std::vector<Vector> docs;
  Rng rng(19);
  for (int m = 0; m < 30; ++m) {
    const double w = rng.uniform();
    docs.push_back(w * t.col(0) + (1 - w) * t.col(1));
  }
  TrainConfig cfg;
  cfg.batch_size = 10;
  cfg.epochs = 300;
  cfg.lr = 0.05;
  cfg.patience = 0;
  const auto split = make_split(docs.size(), 0.6, 0.1, 4);
  const auto trained = train(init_model(5, docs.size(), 2, 6), docs, cost, cfg, split).model;

  const InferConfig infer{400, 0.05};
  for (std::size_t m : split.train) {
    const Vector got = infer_weights(trained, docs[m], cost, cfg.sinkhorn, infer, 1);
    CHECK(std::abs(got.sum() - 1.0) <= 1e-12);
    CHECK(tv(got, trained.weights().col(static_cast<Eigen::Index>(m))) <= 0.05);
  }
  const Vector again = infer_weights(trained, docs[0], cost, cfg.sinkhorn, infer, 1);
  CHECK((again.array() == infer_weights(trained, docs[0], cost, cfg.sinkhorn, infer, 1).array()).all());

  // Document equal to a learned topic.
  const Matrix learned = trained.topics();
  for (Eigen::Index k = 0; k < 2; ++k) {
    const Vector w = infer_weights(trained, learned.col(k), cost, cfg.sinkhorn, infer, 2);
    CHECK(w[k] >= 0.9);
  }
}

TEST_CASE("model container round-trip") {
  const auto d = scratch::dir("wdl_model");
  DictionaryModel m = init_model(6, 4, 3, 9);
  m.epsilon = 0.08;
  m.save(d / "m.wigm");
  const auto bytes = scratch::read(d / "m.wigm");
  CHECK(bytes.substr(0, 4) == "WIGM");
  CHECK(bytes.size() == 4 + 12 + 8 + 8 * (18 + 12));
  const auto back = DictionaryModel::load(d / "m.wigm");
  CHECK(back.epsilon == 0.08);
  CHECK((back.R.array() == m.R.array()).all());
  CHECK((back.A.array() == m.A.array()).all());
  scratch::write(d / "trail.wigm", bytes + "x");
  CHECK_THROWS(DictionaryModel::load(d / "trail.wigm"));
  scratch::write(d / "magic.wigm", "WIGC" + bytes.substr(4));
  CHECK_THROWS(DictionaryModel::load(d / "magic.wigm"));
}

}
