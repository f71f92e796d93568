#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "shf/model.hpp"
#include "test_helpers.hpp"

using namespace shf;
using namespace shf::testing;

namespace {

Dataset tiny_dataset(std::initializer_list<double> xs) {
  Dataset d;
  d.features.resize(static_cast<Index>(xs.size()), 1);
  Index i = 0;
  for (double x : xs) d.features(i++, 0) = x;
  d.response = Vec::Zero(d.features.rows());
  return d;
}

}  // namespace

TEST_CASE("gaussian location model values") {
  Dataset data = tiny_dataset({0.0});
  auto model = make_gaussian_location(data, 1.0);
  CHECK(model.dim == 1);
  Vec theta = Vec::Zero(1);
  // f_1(0) with x_1 = 0: standard normal log density at 0
  CHECK(model.potential(0, theta) == doctest::Approx(-0.9189385332046727).epsilon(1e-12));
  CHECK(model.grad_log_prior(theta)(0) == 0.0);
  CHECK_THROWS_AS(make_gaussian_location(data, 0.0), invalid_parameter);
  CHECK_THROWS_AS(make_gaussian_location(data, -1.0), invalid_parameter);
}

TEST_CASE("gaussian location accepts the paper-scale configuration") {
  Dataset data = make_synthetic_gaussian(10000, 10, 100.0, 3);
  auto model = make_gaussian_location(data, 100.0);
  CHECK(model.n_data == 10000);
  CHECK(model.dim == 10);
  Vec theta = Vec::Zero(10);
  CHECK(std::isfinite(model.potential(42, theta)));
}

TEST_CASE("linreg model values") {
  Dataset d;
  d.features.resize(1, 1);
  d.features(0, 0) = 0.0;
  d.response = Vec::Zero(1);
  auto model = make_linreg(d);
  CHECK(model.dim == 3);  // beta0, beta1, log sigma^2
  Vec theta = Vec::Zero(3);
  CHECK(model.potential(0, theta) == doctest::Approx(-0.9189385332046727).epsilon(1e-12));
  // d f / d log sigma^2 at zero residual, log sigma^2 = 0 is -1/2
  CHECK(model.grad_potential(0, theta)(2) == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(model.log_prior(theta) ==
        doctest::Approx(-1.5 * kLogTwoPi).epsilon(1e-12));
}

TEST_CASE("logreg model values") {
  Dataset d;
  d.features.resize(2, 0);  // intercept-only (p = 0)
  d.response.resize(2);
  d.response << 0.0, 1.0;
  auto model = make_logreg(d);
  CHECK(model.dim == 1);
  Vec beta = Vec::Zero(1);
  CHECK(model.log_prior(beta) == doctest::Approx(-std::log(M_PI)).epsilon(1e-12));
  // zero logit: f = log(1/2) for either label
  CHECK(model.potential(0, beta) == doctest::Approx(std::log(0.5)).epsilon(1e-12));
  CHECK(model.potential(1, beta) == doctest::Approx(std::log(0.5)).epsilon(1e-12));
  Vec one = Vec::Ones(1);
  CHECK(model.grad_log_prior(one)(0) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("logreg rejects labels outside {0,1}") {
  Dataset d;
  d.features.resize(1, 1);
  d.features(0, 0) = 1.0;
  d.response.resize(1);
  d.response << 2.0;
  CHECK_THROWS_AS(make_logreg(d), invalid_data);
}

TEST_CASE("logreg log-likelihood is stable at extreme logits") {
  Dataset d;
  d.features.resize(2, 1);
  d.features << 700.0, -700.0;
  d.response.resize(2);
  d.response << 1.0, 0.0;
  auto model = make_logreg(d);
  Vec beta(2);
  beta << 0.0, 1.0;  // logits +-700
  CHECK(std::isfinite(model.potential(0, beta)));
  CHECK(std::isfinite(model.potential(1, beta)));
  CHECK(model.potential(0, beta) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::isfinite(model.grad_potential(0, beta)(1)));
}

TEST_CASE("finite differences certify every model gradient") {
  std::mt19937_64 rng(7);
  Dataset gd = make_synthetic_gaussian(6, 3, 2.0, 11);
  Dataset ld = make_synthetic_linreg(6, 2, 12);
  Dataset bd = make_synthetic_logreg(6, 2, 13);
  std::vector<TargetModel> models = {make_gaussian_location(gd, 2.0),
                                     make_linreg(ld), make_logreg(bd)};
  for (const auto& model : models) {
    for (int draw = 0; draw < 10; ++draw) {
      Vec theta = random_vec(model.dim, rng, 0.7);
      for (Index n = 0; n < model.n_data; ++n) {
        const Vec g = model.grad_potential(n, theta);
        for (Index i = 0; i < model.dim; ++i) {
          const double fd = central_diff(
              [&](const Vec& t) { return model.potential(n, t); }, theta, i, 1e-6);
          CHECK(rel_error(g(i), fd) < 1e-6);
        }
      }
      const Vec gp = model.grad_log_prior(theta);
      for (Index i = 0; i < model.dim; ++i) {
        const double fd = central_diff(
            [&](const Vec& t) { return model.log_prior(t); }, theta, i, 1e-6);
        CHECK(rel_error(gp(i), fd, 1e-6) < 1e-5);
      }
    }
  }
}

TEST_CASE("hessian-vector products match finite differences of gradients") {
  std::mt19937_64 rng(17);
  Dataset gd = make_synthetic_gaussian(5, 3, 1.5, 21);
  Dataset ld = make_synthetic_linreg(5, 2, 22);
  Dataset bd = make_synthetic_logreg(5, 2, 23);
  std::vector<TargetModel> models = {make_gaussian_location(gd, 1.5),
                                     make_linreg(ld), make_logreg(bd)};
  for (const auto& model : models) {
    for (int draw = 0; draw < 5; ++draw) {
      Vec theta = random_vec(model.dim, rng, 0.6);
      Vec v = random_vec(model.dim, rng);
      for (Index n = 0; n < model.n_data; ++n) {
        const Vec hv = model.hvp_potential(n, theta, v);
        const double h = 1e-6;
        const Vec fd = (model.grad_potential(n, theta + h * v) -
                        model.grad_potential(n, theta - h * v)) /
                       (2.0 * h);
        for (Index i = 0; i < model.dim; ++i)
          CHECK(rel_error(hv(i), fd(i), 1e-7) < 1e-5);
      }
      const Vec hvp = model.hvp_log_prior(theta, v);
      const double h = 1e-6;
      const Vec fdp = (model.grad_log_prior(theta + h * v) -
                       model.grad_log_prior(theta - h * v)) /
                      (2.0 * h);
      for (Index i = 0; i < model.dim; ++i)
        CHECK(rel_error(hvp(i), fdp(i), 1e-7) < 1e-5);
    }
  }
}

TEST_CASE("coreset log potential") {
  Dataset data = tiny_dataset({2.0, -1.0, 0.5});
  auto model = make_gaussian_location(data, 1.0);
  Vec theta = Vec::Zero(1);

  SUBCASE("all weights zero gives the prior") {
    Coreset cs{{0, 1}, Vec::Zero(2)};
    CHECK(coreset_log_potential(model, cs, theta) ==
          doctest::Approx(model.log_prior(theta)).epsilon(1e-14));
  }
  SUBCASE("full-data unit weights reproduce the target potential") {
    Coreset cs{{0, 1, 2}, Vec::Ones(3)};
    double expected = model.log_prior(theta);
    for (Index n = 0; n < 3; ++n) expected += model.potential(n, theta);
    CHECK(coreset_log_potential(model, cs, theta) ==
          doctest::Approx(expected).epsilon(1e-14));
  }
  SUBCASE("weighted single point, frozen value") {
    Coreset cs{{0}, Vec::Constant(1, 3.0)};
    // -log(2pi)/2 + 3 (-log(2pi)/2 - 2) = -2 log(2pi) - 6
    CHECK(coreset_log_potential(model, cs, theta) ==
          doctest::Approx(-9.67575413281869).epsilon(1e-12));
  }
  SUBCASE("out-of-range index rejected") {
    Coreset cs{{5}, Vec::Ones(1)};
    CHECK_THROWS_AS(coreset_log_potential(model, cs, theta), invalid_coreset);
  }
}

TEST_CASE("uniform coreset potential is unbiased over all subsets") {
  // exhaustive over all size-M subsets of a tiny dataset
  Dataset data = tiny_dataset({1.0, -2.0, 0.3, 2.2, -0.7});
  const Index n = data.n_rows();
  auto model = make_gaussian_location(data, 1.0);
  Vec theta = Vec::Constant(1, 0.4);

  double full = model.log_prior(theta);
  for (Index k = 0; k < n; ++k) full += model.potential(k, theta);

  for (Index m = 1; m <= 3; ++m) {
    double sum = 0.0;
    long count = 0;
    std::vector<Index> idx(m);
    std::function<void(Index, Index)> rec = [&](Index start, Index depth) {
      if (depth == m) {
        Coreset cs;
        cs.indices.assign(idx.begin(), idx.end());
        cs.weights = Vec::Constant(m, static_cast<double>(n) / m);
        sum += coreset_log_potential(model, cs, theta) - model.log_prior(theta);
        ++count;
        return;
      }
      for (Index i = start; i < n; ++i) {
        idx[depth] = i;
        rec(i + 1, depth + 1);
      }
    };
    rec(0, 0);
    CHECK(sum / count ==
          doctest::Approx(full - model.log_prior(theta)).epsilon(1e-12));
  }
}

TEST_CASE("coreset evaluation touches only the selected rows") {
  Dataset data = make_synthetic_gaussian(50, 2, 1.0, 5);
  auto counts = std::make_shared<ModelCallCounts>();
  auto model = counting_model(make_gaussian_location(data, 1.0), counts);
  Coreset cs = select_coreset(50, 8, 99);
  Vec theta = Vec::Zero(2);
  coreset_log_potential(model, cs, theta);
  coreset_grad_log_potential(model, cs, theta);
  std::set<Index> selected(cs.indices.begin(), cs.indices.end());
  for (Index n = 0; n < 50; ++n) {
    if (selected.count(n))
      CHECK(counts->rows_touched[n] == 2);
    else
      CHECK(counts->rows_touched[n] == 0);
  }
}

TEST_CASE("select_coreset") {
  SUBCASE("full selection is a permutation with unit weights") {
    Coreset cs = select_coreset(12, 12, 4);
    std::set<Index> seen(cs.indices.begin(), cs.indices.end());
    CHECK(seen.size() == 12);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == 11);
    CHECK(cs.weights.minCoeff() == 1.0);
    CHECK(cs.weights.maxCoeff() == 1.0);
  }
  SUBCASE("paper-scale selection accepted, weights N/M") {
    Coreset cs = select_coreset(10000, 30, 1);
    CHECK(cs.size() == 30);
    CHECK(cs.weights(0) == doctest::Approx(10000.0 / 30.0).epsilon(1e-15));
  }
  SUBCASE("fixed seed reproduces indices") {
    Coreset a = select_coreset(1000, 20, 7);
    Coreset b = select_coreset(1000, 20, 7);
    CHECK(a.indices == b.indices);
  }
  SUBCASE("M > N rejected") {
    CHECK_THROWS_AS(select_coreset(5, 6, 0), invalid_parameter);
  }
  SUBCASE("balanced selection takes ceil(M/2) from label 1") {
    Dataset d;
    d.features.resize(10, 1);
    d.features.setZero();
    d.response.resize(10);
    d.response << 1, 1, 1, 1, 1, 0, 0, 0, 0, 0;
    Coreset cs = select_coreset(10, 5, 3, &d);
    int ones = 0;
    for (Index i : cs.indices)
      if (d.response(i) == 1.0) ++ones;
    CHECK(ones == 3);
    // infeasible when a class is too small
    Dataset bad = d;
    bad.response.setZero();
    CHECK_THROWS_AS(select_coreset(10, 5, 3, &bad), balance_infeasible);
  }
}

TEST_CASE("CSV round trip and error reporting") {
  const std::string path = "test_model_tmp.csv";
  Dataset d = make_synthetic_linreg(20, 3, 77);
  write_csv(path, d, true);

  CsvOptions opts;
  Dataset back = read_csv(path, opts);
  CHECK(back.n_rows() == 20);
  CHECK(back.n_features() == 3);
  CHECK((back.features - d.features).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((back.response - d.response).cwiseAbs().maxCoeff() < 1e-12);

  SUBCASE("response by index without header") {
    write_csv(path, d, false);
    CsvOptions byidx;
    byidx.has_header = false;
    byidx.response_name.clear();
    byidx.response_index = 3;
    Dataset b2 = read_csv(path, byidx);
    CHECK((b2.response - d.response).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("non-numeric cell rejected with row number") {
    std::ofstream out(path);
    out << "x1,y\n1.0,2.0\nfoo,3.0\n";
    out.close();
    CsvOptions o2;
    try {
      read_csv(path, o2);
      CHECK(false);
    } catch (const invalid_data& e) {
      CHECK(std::string(e.what()).find("row 3") != std::string::npos);
    }
  }
  SUBCASE("missing response column") {
    CsvOptions o3;
    o3.response_name = "nope";
    CHECK_THROWS_AS(read_csv(path, o3), invalid_data);
  }
  std::remove(path.c_str());
}
