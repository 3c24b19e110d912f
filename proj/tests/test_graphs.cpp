#include <doctest.h>

#include <cmath>
#include <fstream>

#include "mrgnn/archive.hpp"
#include "mrgnn/graphs.hpp"
#include "test_support.hpp"

using namespace mrgnn;
using testing::make_nodes;
using testing::random_demand;
using testing::random_nodes;

namespace {

// Population std of the listed distances, computed directly.
double population_sigma2(const std::vector<double>& d) {
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(d.size());
  double var = 0.0;
  for (double v : d) var += (v - mean) * (v - mean);
  return var / static_cast<double>(d.size());
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> profile_of(const DemandTensor& t, std::size_t node) {
  std::vector<double> p;
  for (std::size_t b = 0; b < t.bins(); ++b) p.push_back(t.at(b, node, kInflow));
  for (std::size_t b = 0; b < t.bins(); ++b) p.push_back(t.at(b, node, kOutflow));
  return p;
}

std::map<Mode, NodeSet> three_mode_nodes(std::mt19937_64& rng) {
  return {{Mode::bike, random_nodes(rng, Mode::bike, 7, "b")},
          {Mode::subway, random_nodes(rng, Mode::subway, 4, "s")},
          {Mode::ridehail, random_nodes(rng, Mode::ridehail, 3, "h")}};
}

std::map<Mode, DemandTensor> demand_for(std::mt19937_64& rng, const std::map<Mode, NodeSet>& nodes) {
  std::map<Mode, DemandTensor> out;
  for (const auto& [m, ns] : nodes) out.emplace(m, random_demand(rng, ns, 30));
  return out;
}

}  // namespace

TEST_CASE("geographic kernel on three collinear nodes") {
  const NodeSet ns = make_nodes(Mode::bike, {{0, 0}, {0, 100}, {0, 200}}, "b");
  const double s2 = population_sigma2({100, 100, 200});
  for (double eps : {0.0, 0.1}) {
    const RelationGraph g = build_geo_adjacency(ns, ns, {eps});
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const double d = 100.0 * std::abs(i - j);
        double expect = std::exp(-d * d / s2);
        if (expect < eps) expect = 0.0;
        if (i == j) expect = 1.0;
        CHECK(g.weights(i, j) == doctest::Approx(expect).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("geographic kernel edge cases") {
  SUBCASE("co-located inter-modal pair weighs one") {
    const NodeSet a = make_nodes(Mode::subway, {{10, 10}, {500, 40}}, "s");
    const NodeSet b = make_nodes(Mode::bike, {{10, 10}, {900, 900}}, "b");
    const RelationGraph g = build_geo_adjacency(a, b);
    CHECK(g.weights(0, 0) == 1.0);
    CHECK(g.weights.rows() == 2);
    CHECK(g.weights.cols() == 2);
  }
  SUBCASE("single node intra set") {
    const NodeSet a = make_nodes(Mode::bike, {{3, 4}}, "b");
    const RelationGraph g = build_geo_adjacency(a, a);
    CHECK(g.weights.rows() == 1);
    CHECK(g.weights(0, 0) == 1.0);
  }
  SUBCASE("all nodes co-located is degenerate") {
    const NodeSet a = make_nodes(Mode::bike, {{1, 1}, {1, 1}, {1, 1}}, "b");
    CHECK_THROWS_AS(build_geo_adjacency(a, a), DataError);
  }
  SUBCASE("empty and non-finite inputs") {
    NodeSet empty;
    const NodeSet a = make_nodes(Mode::bike, {{1, 1}, {2, 2}}, "b");
    CHECK_THROWS_AS(build_geo_adjacency(empty, a), DataError);
    NodeSet bad = make_nodes(Mode::subway, {{1, 1}, {NAN, 2}}, "s");
    CHECK_THROWS_AS(build_geo_adjacency(bad, a), DataError);
  }
}

TEST_CASE("geographic intra matrices are symmetric with unit diagonal") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const NodeSet ns = random_nodes(rng, Mode::bike, 3 + trial % 8, "b");
    const RelationGraph g = build_geo_adjacency(ns, ns);
    CHECK((g.weights - g.weights.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((g.weights.diagonal().array() == 1.0).all());
    CHECK((g.weights.array() >= 0.0).all());
  }
}

TEST_CASE("semantic adjacency") {
  SUBCASE("identical profile correlates fully") {
    DemandTensor src(Mode::subway, {"s0", "s1"}, 0, 3600, 5);
    DemandTensor dst(Mode::bike, {"b0"}, 0, 3600, 5);
    for (std::size_t b = 0; b < 5; ++b) {
      src.at(b, 0, 0) = static_cast<double>(b);
      src.at(b, 0, 1) = static_cast<double>(b * b);
      src.at(b, 1, 0) = 5.0 - static_cast<double>(b);
      src.at(b, 1, 1) = 1.0;
      dst.at(b, 0, 0) = static_cast<double>(b);
      dst.at(b, 0, 1) = static_cast<double>(b * b);
    }
    const RelationGraph g = build_semantic_adjacency(src, dst, 5);
    CHECK(g.weights(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("negated profile clips to zero") {
    DemandTensor src(Mode::subway, {"s0"}, 0, 3600, 4);
    DemandTensor dst(Mode::bike, {"b0"}, 0, 3600, 4);
    for (std::size_t b = 0; b < 4; ++b) {
      src.at(b, 0, 0) = static_cast<double>(b);
      src.at(b, 0, 1) = static_cast<double>(2 * b);
      dst.at(b, 0, 0) = -static_cast<double>(b);
      dst.at(b, 0, 1) = -static_cast<double>(2 * b);
    }
    CHECK(build_semantic_adjacency(src, dst, 5).weights(0, 0) == 0.0);
  }
  SUBCASE("constant profile has zero correlation") {
    DemandTensor src(Mode::subway, {"s0"}, 0, 4 * 3600, 4);
    src.values.setConstant(3.0);
    std::mt19937_64 rng(2);
    const DemandTensor dst = random_demand(rng, make_nodes(Mode::bike, {{0, 0}}, "b"), 4);
    CHECK(build_semantic_adjacency(src, dst, 5).weights(0, 0) == 0.0);
  }
  SUBCASE("mismatched time axes") {
    std::mt19937_64 rng(3);
    const DemandTensor a = random_demand(rng, make_nodes(Mode::bike, {{0, 0}}, "b"), 4);
    const DemandTensor b = random_demand(rng, make_nodes(Mode::subway, {{0, 0}}, "s"), 5);
    CHECK_THROWS_AS(build_semantic_adjacency(a, b, 2), DataError);
  }
}

TEST_CASE("semantic adjacency matches brute-force Pearson and top-k") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const NodeSet ns = random_nodes(rng, Mode::bike, 4, "b");
    const NodeSet other = random_nodes(rng, Mode::subway, 4, "s");
    const DemandTensor d = random_demand(rng, ns, 6);
    const DemandTensor o = random_demand(rng, other, 6);
    for (bool intra : {true, false}) {
      const DemandTensor& src = intra ? d : o;
      const RelationGraph g = build_semantic_adjacency(src, d, 2);
      for (std::size_t i = 0; i < 4; ++i) {
        std::vector<std::pair<double, std::size_t>> cand;
        for (std::size_t j = 0; j < 4; ++j) {
          if (intra && i == j) continue;
          cand.push_back({std::clamp(pearson(profile_of(d, i), profile_of(src, j)), 0.0, 1.0), j});
        }
        std::stable_sort(cand.begin(), cand.end(), [](auto a, auto b) { return a.first > b.first; });
        Eigen::RowVectorXd expect = Eigen::RowVectorXd::Zero(4);
        for (std::size_t r = 0; r < 2; ++r) expect(static_cast<Eigen::Index>(cand[r].second)) = cand[r].first;
        if (intra) expect(static_cast<Eigen::Index>(i)) = 1.0;
        CHECK((g.weights.row(static_cast<Eigen::Index>(i)) - expect).cwiseAbs().maxCoeff() < 1e-12);
      }
    }
  }
}

TEST_CASE("semantic rows respect top-k sparsity") {
  std::mt19937_64 rng(8);
  for (int k = 1; k <= 6; ++k) {
    const NodeSet ns = random_nodes(rng, Mode::bike, 9, "b");
    const NodeSet src = random_nodes(rng, Mode::ridehail, 7, "h");
    const DemandTensor d = random_demand(rng, ns, 20);
    const DemandTensor s = random_demand(rng, src, 20);
    const RelationGraph intra = build_semantic_adjacency(d, d, k);
    const RelationGraph inter = build_semantic_adjacency(s, d, k);
    for (Eigen::Index i = 0; i < 9; ++i) {
      CHECK((intra.weights.row(i).array() != 0.0).count() <= k + 1);
      CHECK((inter.weights.row(i).array() != 0.0).count() <= k);
      CHECK(intra.weights(i, i) == 1.0);
    }
  }
}

TEST_CASE("row normalization") {
  Eigen::MatrixXd a(2, 2);
  a << 2, 2, 0, 0;
  const Eigen::MatrixXd n = row_normalize(a);
  CHECK(n(0, 0) == 0.5);
  CHECK(n(0, 1) == 0.5);
  CHECK(n(1, 0) == 0.0);
  CHECK(n(1, 1) == 0.0);
  CHECK(row_normalize(Eigen::MatrixXd::Identity(4, 4)) == Eigen::MatrixXd::Identity(4, 4));
  Eigen::MatrixXd neg = a;
  neg(1, 1) = -1.0;
  CHECK_THROWS_AS(row_normalize(neg), std::invalid_argument);
}

TEST_CASE("row normalization sums and idempotence on random matrices") {
  std::mt19937_64 rng(13);
  std::bernoulli_distribution zero_row(0.2);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::MatrixXd a = testing::random_matrix(rng, 1 + trial % 9, 1 + trial % 7, 0.0, 10.0);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      if (zero_row(rng)) a.row(i).setZero();
    }
    const Eigen::MatrixXd n = row_normalize(a);
    for (Eigen::Index i = 0; i < n.rows(); ++i) {
      const double s = n.row(i).sum();
      CHECK((std::abs(s - 1.0) <= 1e-9 || s == 0.0));
    }
    CHECK((row_normalize(n) - n).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("graph set relation census") {
  std::mt19937_64 rng(17);
  const auto nodes = three_mode_nodes(rng);
  const auto demand = demand_for(rng, nodes);
  const std::vector<std::pair<std::vector<Mode>, std::size_t>> cases{
      {{Mode::bike}, 2},
      {{Mode::bike, Mode::subway}, 6},
      {{Mode::bike, Mode::ridehail}, 6},
      {{Mode::bike, Mode::subway, Mode::ridehail}, 10}};
  for (const auto& [modes, expected] : cases) {
    std::map<Mode, NodeSet> ns;
    for (Mode m : modes) ns.emplace(m, nodes.at(m));
    const auto gs = assemble_graph_set(Mode::bike, ns, demand);
    CHECK(gs.relations.size() == expected);
    CHECK(expected_relation_count(modes.size()) == expected);
    for (const auto& [key, g] : gs.relations) {
      if (!g.intra()) CHECK(g.dst == Mode::bike);
      CHECK(g.weights.rows() == static_cast<Eigen::Index>(nodes.at(g.dst).size()));
      CHECK(g.weights.cols() == static_cast<Eigen::Index>(nodes.at(g.src).size()));
    }
  }
  SUBCASE("subway as target") {
    const auto gs = assemble_graph_set(Mode::subway, nodes, demand);
    CHECK(gs.relations.size() == 10);
    for (const auto& [key, g] : gs.relations) {
      if (!g.intra()) CHECK(g.dst == Mode::subway);
    }
  }
  SUBCASE("missing demand") {
    auto partial = demand;
    partial.erase(Mode::ridehail);
    CHECK_THROWS_AS(assemble_graph_set(Mode::bike, nodes, partial), DataError);
  }
  SUBCASE("missing target") {
    std::map<Mode, NodeSet> ns{{Mode::subway, nodes.at(Mode::subway)}};
    CHECK_THROWS_AS(assemble_graph_set(Mode::bike, ns, demand), DataError);
  }
}

TEST_CASE("permuting a node set permutes the matrices") {
  std::mt19937_64 rng(19);
  const auto nodes = three_mode_nodes(rng);
  const auto demand = demand_for(rng, nodes);
  const auto gs = assemble_graph_set(Mode::bike, nodes, demand);

  std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
  auto pnodes = nodes;
  auto pdemand = demand;
  NodeSet& pb = pnodes.at(Mode::bike);
  pb = NodeSet{Mode::bike, {}, {}};
  for (std::size_t i : perm) {
    pb.node_ids.push_back(nodes.at(Mode::bike).node_ids[i]);
    pb.coordinates.push_back(nodes.at(Mode::bike).coordinates[i]);
  }
  pdemand.at(Mode::bike) = demand.at(Mode::bike).select_nodes(perm);
  const auto pgs = assemble_graph_set(Mode::bike, pnodes, pdemand);

  for (const auto& [key, g] : gs.relations) {
    const Eigen::MatrixXd& pw = pgs.relations.at(key).weights;
    for (Eigen::Index r = 0; r < pw.rows(); ++r) {
      for (Eigen::Index c = 0; c < pw.cols(); ++c) {
        const Eigen::Index orig_r = key.dst == Mode::bike ? static_cast<Eigen::Index>(perm[r]) : r;
        const Eigen::Index orig_c = key.src == Mode::bike ? static_cast<Eigen::Index>(perm[c]) : c;
        CHECK(pw(r, c) == doctest::Approx(g.weights(orig_r, orig_c)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("graph set persistence") {
  testing::TempDir dir("graphs");
  std::mt19937_64 rng(23);
  const auto nodes = three_mode_nodes(rng);
  const auto gs = assemble_graph_set(Mode::bike, nodes, demand_for(rng, nodes));
  const auto path = dir / "g.mrgs";
  save_graph_set(gs, path);

  SUBCASE("round trip is bit exact") {
    const auto back = load_graph_set(path);
    CHECK(back.target == gs.target);
    CHECK(back.relations.size() == gs.relations.size());
    for (const auto& [key, g] : gs.relations) CHECK(back.relations.at(key).weights == g.weights);
    for (const auto& [m, ns] : gs.node_sets) {
      CHECK(back.node_sets.at(m).node_ids == ns.node_ids);
      for (std::size_t i = 0; i < ns.size(); ++i) {
        CHECK(back.node_sets.at(m).coordinates[i].x == ns.coordinates[i].x);
        CHECK(back.node_sets.at(m).coordinates[i].y == ns.coordinates[i].y);
      }
    }
    CHECK(back.fingerprint() == gs.fingerprint());
  }
  SUBCASE("truncated file is rejected") {
    const auto size = std::filesystem::file_size(path);
    for (auto keep : {size - 1, size / 2, std::uintmax_t{10}, std::uintmax_t{0}}) {
      std::filesystem::resize_file(path, keep);
      CHECK_THROWS_AS(load_graph_set(path), FormatError);
    }
  }
  SUBCASE("flipped byte is rejected") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(-20, std::ios::end);
    char c = 0;
    f.read(&c, 1);
    c = static_cast<char>(c ^ 0x40);
    f.seekp(-20, std::ios::end);
    f.write(&c, 1);
    f.close();
    CHECK_THROWS_AS(load_graph_set(path), FormatError);
  }
  SUBCASE("permuted node order on disk is rejected") {
    Archive a = read_archive(path, std::string_view("MRGS\0\0\0\1", 8), 1);
    auto& ids = a.manifest["modes"][0]["node_ids"];
    std::swap(ids[0], ids[1]);
    write_archive(a, path);
    CHECK_THROWS_AS(load_graph_set(path), FormatError);
  }
  SUBCASE("wrong version is rejected") {
    Archive a = read_archive(path, std::string_view("MRGS\0\0\0\1", 8), 1);
    a.version = 99;
    write_archive(a, path);
    CHECK_THROWS_AS(load_graph_set(path), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_graph_set(dir / "nope.mrgs"), DataError); }
}

TEST_CASE("normalized graphs") {
  std::mt19937_64 rng(29);
  const auto nodes = three_mode_nodes(rng);
  const auto gs = assemble_graph_set(Mode::bike, nodes, demand_for(rng, nodes));
  const NormalizedGraphs ng = normalize_graphs(gs);
  CHECK(ng.matrices.size() == 10);
  CHECK(ng.fingerprint == gs.fingerprint());
  CHECK(ng.nodes(Mode::subway) == 4);
  for (const auto& [key, m] : ng.matrices) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double s = m.row(i).sum();
      CHECK((std::abs(s - 1.0) <= 1e-9 || s == 0.0));
    }
  }
}
