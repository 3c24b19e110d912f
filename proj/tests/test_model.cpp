#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "mrgnn/model.hpp"
#include "mrgnn/ops.hpp"
#include "mrgnn/train.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mrgnn;

namespace {

Hidden random_hidden(std::mt19937_64& rng, int b, int t, int n, int c) {
  Hidden h(b, t, n, c);
  h.data = testing::random_matrix(rng, h.data.rows(), c);
  return h;
}

ops::ConvParams random_conv(std::mt19937_64& rng, int in, int out) {
  return {testing::random_matrix(rng, in, out), testing::random_matrix(rng, 1, out)};
}

const std::map<Mode, int> kSmallNodes{{Mode::bike, 3}, {Mode::subway, 2}, {Mode::ridehail, 2}};

ModelConfig small_config(int window = 6, std::vector<int> channels = {4, 4}) {
  ModelConfig c;
  c.window = window;
  c.channels = std::move(channels);
  c.head_hidden = 5;
  c.dropout = 0.0;
  return c;
}

std::map<Mode, Eigen::MatrixXd> random_targets(std::mt19937_64& rng, const std::map<Mode, int>& nodes, int batch) {
  std::map<Mode, Eigen::MatrixXd> t;
  for (const auto& [m, n] : nodes) t[m] = testing::random_matrix(rng, batch * n, 2, 0.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("graph convolutions match per-edge loops") {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> size(1, 8);
  for (int trial = 0; trial < 50; ++trial) {
    const int nt = size(rng), na = size(rng), cin = size(rng), cout = size(rng);
    const Hidden target = random_hidden(rng, 2, 3, nt, cin);
    const Hidden aux = random_hidden(rng, 2, 3, na, cin);
    const Eigen::MatrixXd a_t = oracle::random_relation(rng, nt, nt);
    const Eigen::MatrixXd a_c = oracle::random_relation(rng, nt, na);
    const ops::ConvParams p = random_conv(rng, cin, cout);

    const Hidden intra = ops::intra_modal_conv(target, a_t, p);
    const Hidden sim = ops::inter_modal_similarity_conv(aux, a_t, a_c, p);
    const Hidden diff = ops::inter_modal_difference_conv(aux, target, a_t, a_c, p);
    for (int b = 0; b < 2; ++b) {
      for (int t = 0; t < 3; ++t) {
        const Eigen::MatrixXd ht = target.slice(b, t), ha = aux.slice(b, t);
        CHECK((intra.slice(b, t) - oracle::intra(ht, a_t, p.weight, p.bias)).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK((sim.slice(b, t) - oracle::similarity(ha, a_t, a_c, p.weight, p.bias)).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK((diff.slice(b, t) - oracle::difference(ha, ht, a_t, a_c, p.weight, p.bias)).cwiseAbs().maxCoeff() <= 1e-10);
      }
    }
  }
}

TEST_CASE("isolated nodes receive only the bias") {
  const Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2, 2);
  std::mt19937_64 rng(3);
  const Hidden h = random_hidden(rng, 1, 1, 2, 3);
  ops::ConvParams p = random_conv(rng, 3, 2);
  p.bias << 0.5, -0.5;
  const Hidden out = ops::intra_modal_conv(h, a, p);
  CHECK(out.data(0, 0) == 0.5);
  CHECK(out.data(0, 1) == 0.0);
}

TEST_CASE("causal and gated convolutions match loops") {
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 1 + trial % 3, steps = k + 3, cin = 2 + trial % 3, cout = 1 + trial % 4;
    const Hidden x = random_hidden(rng, 2, steps, 3, cin);
    const ops::ConvParams p = random_conv(rng, k * cin, 2 * cout);
    const Hidden lin = ops::causal_linear(x, p, k);
    const Hidden gated = ops::temporal_gated_conv(x, p, k);
    REQUIRE(lin.steps == steps - k + 1);
    for (int b = 0; b < 2; ++b) {
      for (int t = 0; t < lin.steps; ++t) {
        for (int n = 0; n < 3; ++n) {
          for (int c = 0; c < 2 * cout; ++c) {
            double s = p.bias(0, c);
            for (int tap = 0; tap < k; ++tap) {
              for (int i = 0; i < cin; ++i) s += x.data(x.row(b, t + tap, n), i) * p.weight(tap * cin + i, c);
            }
            CHECK(std::abs(lin.data(lin.row(b, t, n), c) - s) <= 1e-12);
          }
          for (int c = 0; c < cout; ++c) {
            const double pv = lin.data(lin.row(b, t, n), c), qv = lin.data(lin.row(b, t, n), cout + c);
            CHECK(std::abs(gated.data(gated.row(b, t, n), c) - pv / (1.0 + std::exp(-qv))) <= 1e-12);
          }
        }
      }
    }
  }
}

TEST_CASE("layer norm over channels") {
  std::mt19937_64 rng(107);
  const Hidden x = random_hidden(rng, 2, 2, 3, 5);
  ops::LayerNormParams p{testing::random_matrix(rng, 1, 5), testing::random_matrix(rng, 1, 5)};
  const Hidden y = ops::layer_norm(x, p);
  for (Eigen::Index r = 0; r < x.data.rows(); ++r) {
    const double mean = x.data.row(r).mean();
    const double var = (x.data.row(r).array() - mean).square().mean();
    for (int c = 0; c < 5; ++c) {
      const double expect = (x.data(r, c) - mean) / std::sqrt(var + ops::kLayerNormEps) * p.scale(0, c) + p.shift(0, c);
      CHECK(std::abs(y.data(r, c) - expect) <= 1e-12);
    }
  }
}

TEST_CASE("propagate applies the matrix per slice") {
  std::mt19937_64 rng(109);
  const Hidden x = random_hidden(rng, 2, 3, 4, 2);
  const Eigen::MatrixXd a = testing::random_matrix(rng, 5, 4);
  const Hidden y = ops::propagate(a, x);
  CHECK(y.nodes == 5);
  for (int b = 0; b < 2; ++b) {
    for (int t = 0; t < 3; ++t) CHECK((y.slice(b, t) - a * x.slice(b, t)).cwiseAbs().maxCoeff() <= 1e-14);
  }
}

TEST_CASE("parameter census and initialization") {
  for (const auto& modes : std::vector<std::vector<Mode>>{
           {Mode::bike}, {Mode::bike, Mode::subway}, {Mode::bike, Mode::subway, Mode::ridehail}}) {
    ModelConfig c;
    c.modes = modes;
    const ModelState m = init_model(c, 7);
    // independent count: per block and mode two gated convs, the graph convs and a norm; then one head per mode
    const std::size_t aux = modes.size() - 1;
    std::size_t expect = 0;
    int cin = 2;
    for (int width : c.channels) {
      for (Mode mode : modes) {
        const std::size_t convs = mode == Mode::bike ? 2 + 4 * aux : 2;
        expect += static_cast<std::size_t>(c.kernel * cin * 2 * width + 2 * width);
        expect += static_cast<std::size_t>(c.kernel * width * 2 * width + 2 * width);
        expect += convs * static_cast<std::size_t>(width * width + width);
        expect += static_cast<std::size_t>(2 * width);
      }
      cin = width;
    }
    const int rem = c.window - 2 * c.blocks() * (c.kernel - 1);
    expect += modes.size() * static_cast<std::size_t>(rem * cin * c.head_hidden + c.head_hidden +
                                                      c.head_hidden * c.head_hidden + c.head_hidden +
                                                      c.head_hidden * 2 + 2);
    CHECK(m.params.scalar_count() == expect);
    CHECK(expected_parameter_count(c) == expect);

    ModelState copy = init_model(c, 7);
    auto a = copy.params.refs();
    auto b = const_cast<ModelState&>(m).params.refs();
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(*a[k].value == *b[k].value);
      const std::string& name = a[k].name;
      const Eigen::MatrixXd& v = *a[k].value;
      if (name.ends_with(".bias") || name.ends_with(".shift")) {
        CHECK(v.isZero());
      } else if (name.ends_with(".scale")) {
        CHECK(v.isOnes());
      } else {
        const double bound = std::sqrt(6.0 / static_cast<double>(v.rows() + v.cols()));
        CHECK(v.cwiseAbs().maxCoeff() <= bound);
        CHECK(a[k].decays);
      }
    }
  }
  ModelConfig bad;
  bad.window = 3;
  CHECK_THROWS_AS(init_model(bad, 1), ConfigError);
}

TEST_CASE("forward shapes and modes") {
  std::mt19937_64 rng(113);
  const ModelConfig c = small_config();
  const NormalizedGraphs g = oracle::random_graphs(rng, Mode::bike, kSmallNodes);
  const ModelState m = init_model(c, 1);
  const auto inputs = oracle::random_inputs(rng, kSmallNodes, 4, 6);
  const Predictions p = forward(m, inputs, g, false);
  CHECK(p.size() == 3);
  CHECK(p.at(Mode::bike).rows() == 12);
  CHECK(p.at(Mode::subway).rows() == 8);
  CHECK(p.at(Mode::bike).cols() == 2);

  auto wrong = inputs;
  wrong.erase(Mode::ridehail);
  CHECK_THROWS_AS(forward(m, wrong, g, false), DataError);
  ModelConfig two = c;
  two.modes = {Mode::bike, Mode::subway};
  CHECK_THROWS_AS(forward(init_model(two, 1), inputs, g, false), DataError);
}

TEST_CASE("analytic gradients match finite differences") {
  std::mt19937_64 rng(127);
  const NormalizedGraphs g = oracle::random_graphs(rng, Mode::bike, kSmallNodes);
  const auto inputs = oracle::random_inputs(rng, kSmallNodes, 2, 6);
  const auto targets = random_targets(rng, kSmallNodes, 2);

  SUBCASE("evaluation mode") {
    ModelState m = init_model(small_config(), 1);
    oracle::randomize(m, rng);
    ForwardCache cache;
    forward(m, inputs, g, false, nullptr, &cache);
    REQUIRE(cache.kink_margin() > 1e-6);
    const auto r = gradcheck::run(m, inputs, targets, g, 0.2, 1e-5, 1e-4, 1e-8);
    CHECK(r.failures == 0);
    CHECK(r.checked == m.params.scalar_count());
    MESSAGE("worst relative error " << r.worst_relative << " at " << r.worst_name);
  }
  SUBCASE("with replayed dropout masks") {
    ModelConfig c = small_config(4, {3});
    c.dropout = 0.3;
    ModelState m = init_model(c, 2);
    oracle::randomize(m, rng);
    const auto in4 = oracle::random_inputs(rng, kSmallNodes, 2, 4);
    const auto r = gradcheck::run(m, in4, targets, g, 0.5, 1e-5, 1e-4, 1e-8, 99);
    CHECK(r.failures == 0);
  }
}

TEST_CASE("outputs are causal in time") {
  std::mt19937_64 rng(131);
  ModelConfig c = small_config(8, {4, 4});
  c.kernel = 2;
  ModelState m = init_model(c, 3);
  oracle::randomize(m, rng);
  const NormalizedGraphs g = oracle::random_graphs(rng, Mode::bike, kSmallNodes);
  const auto inputs = oracle::random_inputs(rng, kSmallNodes, 2, 8);

  ForwardCache base;
  forward(m, inputs, g, false, nullptr, &base);
  for (int s = 0; s < 8; ++s) {
    auto changed = inputs;
    for (auto& [mode, h] : changed) {
      for (int b = 0; b < 2; ++b) h.slice(b, s).array() += 3.0;
    }
    ForwardCache pert;
    forward(m, changed, g, false, nullptr, &pert);
    for (int l = 0; l < c.blocks(); ++l) {
      const int reach = 2 * (l + 1) * (c.kernel - 1);  // output step t covers inputs t .. t + reach
      for (Mode mode : c.modes) {
        const Hidden& a = base.blocks[static_cast<std::size_t>(l)].output.at(mode);
        const Hidden& b = pert.blocks[static_cast<std::size_t>(l)].output.at(mode);
        for (int t = 0; t < a.steps; ++t) {
          for (int bb = 0; bb < 2; ++bb) {
            if (t + reach < s) CHECK(a.slice(bb, t) == b.slice(bb, t));
          }
        }
      }
    }
  }
}

TEST_CASE("node permutation equivariance") {
  std::mt19937_64 rng(137);
  const ModelConfig c = small_config();
  ModelState m = init_model(c, 4);
  oracle::randomize(m, rng);
  const std::map<Mode, int> nodes{{Mode::bike, 5}, {Mode::subway, 3}, {Mode::ridehail, 4}};
  const NormalizedGraphs g = oracle::random_graphs(rng, Mode::bike, nodes);
  const auto inputs = oracle::random_inputs(rng, nodes, 3, 6);
  const std::map<Mode, std::vector<int>> perm{{Mode::bike, {2, 4, 0, 1, 3}}, {Mode::subway, {1, 2, 0}}, {Mode::ridehail, {3, 1, 0, 2}}};

  auto pmat = [&](Mode m) {
    const auto& p = perm.at(m);
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p.size()), static_cast<Eigen::Index>(p.size()));
    for (std::size_t i = 0; i < p.size(); ++i) P(static_cast<Eigen::Index>(i), p[i]) = 1.0;  // new row i = old p[i]
    return P;
  };
  NormalizedGraphs pg = g;
  for (auto& [key, a] : pg.matrices) a = pmat(key.dst) * a * pmat(key.src).transpose();
  std::map<Mode, Hidden> pin;
  for (const auto& [mode, h] : inputs) {
    Hidden x = h;
    for (int b = 0; b < h.batch; ++b) {
      for (int t = 0; t < h.steps; ++t) x.slice(b, t) = pmat(mode) * h.slice(b, t);
    }
    pin.emplace(mode, std::move(x));
  }
  const Predictions a = forward(m, inputs, g, false);
  const Predictions b = forward(m, pin, pg, false);
  for (const auto& [mode, pa] : a) {
    const int n = nodes.at(mode);
    for (int s = 0; s < 3; ++s) {
      const Eigen::MatrixXd expect = pmat(mode) * pa.middleRows(s * n, n);
      CHECK((b.at(mode).middleRows(s * n, n) - expect).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }
}

TEST_CASE("checkpoint round trip") {
  testing::TempDir dir("ckpt");
  std::mt19937_64 rng(139);
  Checkpoint ck;
  ck.model = init_model(small_config(), 5);
  oracle::randomize(ck.model, rng);
  ck.stats[Mode::bike] = {Mode::bike, 1.0, 40.0};
  ck.graph_fingerprint = 0xabcdef12345ULL;
  ck.epochs = 17;
  save_checkpoint(ck, dir / "m.mrck");
  const Checkpoint back = load_checkpoint(dir / "m.mrck", ck.graph_fingerprint);
  CHECK(back.epochs == 17);
  CHECK(back.stats.at(Mode::bike).max == 40.0);
  CHECK(to_json(back.model.config) == to_json(ck.model.config));
  auto a = back.model.params;
  auto b = ck.model.params;
  auto ra = a.refs(), rb = b.refs();
  REQUIRE(ra.size() == rb.size());
  for (std::size_t k = 0; k < ra.size(); ++k) CHECK(*ra[k].value == *rb[k].value);
  CHECK_THROWS_AS(load_checkpoint(dir / "m.mrck", 42ULL), FormatError);
}
