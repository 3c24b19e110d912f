#include "mrgnn/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mrgnn/archive.hpp"

namespace mrgnn {

namespace {

constexpr char kCheckpointMagic[] = "MRCK\0\0\0\1";
constexpr std::uint32_t kCheckpointVersion = 1;

using ops::ConvParams;
using ops::LayerNormParams;

std::string_view to_string(ConvRole role) {
  switch (role) {
    case ConvRole::intra:
      return "intra";
    case ConvRole::similarity:
      return "similarity";
    case ConvRole::difference:
      return "difference";
  }
  return "unknown";
}

int block_input_channels(const ModelConfig& c, int block) {
  return block == 0 ? c.input_channels : c.channels[static_cast<std::size_t>(block - 1)];
}

template <typename Fn>
void visit_params(ModelParams& p, Fn&& fn) {
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    auto& b = p.blocks[l];
    const std::string prefix = "block" + std::to_string(l) + ".";
    for (auto& [m, c] : b.tcn1) {
      fn(prefix + "tcn1." + std::string(to_string(m)) + ".weight", c.weight, true);
      fn(prefix + "tcn1." + std::string(to_string(m)) + ".bias", c.bias, false);
    }
    for (auto& [m, convs] : b.graph) {
      for (auto& [key, c] : convs) {
        const std::string name = prefix + "graph." + std::string(to_string(m)) + "." + conv_name(key);
        fn(name + ".weight", c.weight, true);
        fn(name + ".bias", c.bias, false);
      }
    }
    for (auto& [m, c] : b.tcn2) {
      fn(prefix + "tcn2." + std::string(to_string(m)) + ".weight", c.weight, true);
      fn(prefix + "tcn2." + std::string(to_string(m)) + ".bias", c.bias, false);
    }
    for (auto& [m, n] : b.norm) {
      fn(prefix + "norm." + std::string(to_string(m)) + ".scale", n.scale, false);
      fn(prefix + "norm." + std::string(to_string(m)) + ".shift", n.shift, false);
    }
  }
  for (auto& [m, h] : p.heads) {
    const std::string prefix = "head." + std::string(to_string(m)) + ".";
    fn(prefix + "conv.weight", h.conv.weight, true);
    fn(prefix + "conv.bias", h.conv.bias, false);
    fn(prefix + "hidden.weight", h.hidden.weight, true);
    fn(prefix + "hidden.bias", h.hidden.bias, false);
    fn(prefix + "output.weight", h.output.weight, true);
    fn(prefix + "output.bias", h.output.bias, false);
  }
}

Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& pre, const Eigen::MatrixXd& grad) {
  return (pre.array() > 0.0).select(grad, 0.0);
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

std::vector<Mode> ModelConfig::auxiliary_modes() const {
  std::vector<Mode> out;
  for (Mode m : modes) {
    if (m != target) out.push_back(m);
  }
  return out;
}

void ModelConfig::validate() const {
  if (modes.empty()) throw ConfigError("model needs at least one mode");
  if (canonical_modes(modes) != modes) throw ConfigError("model modes must be distinct and in bike, subway, ridehail order");
  if (std::find(modes.begin(), modes.end(), target) == modes.end()) {
    throw ConfigError("target mode '" + std::string(to_string(target)) + "' is not among the model modes");
  }
  if (channels.empty()) throw ConfigError("model needs at least one ST-MR block");
  for (int c : channels) {
    if (c < 1) throw ConfigError("channel widths must be at least 1");
  }
  if (head_hidden < 1 || input_channels < 1) throw ConfigError("head and input widths must be at least 1");
  if (kernel < 1) throw ConfigError("temporal kernel width must be at least 1");
  if (window < 1) throw ConfigError("window length must be at least 1");
  if (remaining_steps() < 1) {
    throw ConfigError("temporal budget exceeded: T - L*2*(K_t-1) = " + std::to_string(remaining_steps()) +
                      " (need at least 1)");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
}

std::string conv_name(const GraphConvKey& key) {
  return std::string(to_string(key.role)) + "." + std::string(to_string(key.src)) + "." +
         std::string(to_string(key.kind));
}

std::vector<GraphConvKey> graph_convs_for(const ModelConfig& config, Mode mode) {
  std::vector<GraphConvKey> out;
  for (RelationKind k : all_kinds) out.push_back({ConvRole::intra, mode, k});
  if (mode != config.target) return out;
  for (Mode aux : config.auxiliary_modes()) {
    for (RelationKind k : all_kinds) {
      out.push_back({ConvRole::similarity, aux, k});
      out.push_back({ConvRole::difference, aux, k});
    }
  }
  return out;
}

std::vector<ParamRef> ModelParams::refs() {
  std::vector<ParamRef> out;
  visit_params(*this, [&](std::string name, Eigen::MatrixXd& m, bool decays) { out.push_back({std::move(name), &m, decays}); });
  return out;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  visit_params(const_cast<ModelParams&>(*this),
               [&](const std::string&, Eigen::MatrixXd& m, bool) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams out = *this;
  visit_params(out, [](const std::string&, Eigen::MatrixXd& m, bool) { m.setZero(); });
  return out;
}

std::size_t expected_parameter_count(const ModelConfig& c) {
  std::size_t n = 0;
  const std::size_t k = static_cast<std::size_t>(c.kernel);
  for (int l = 0; l < c.blocks(); ++l) {
    const auto cin = static_cast<std::size_t>(block_input_channels(c, l));
    const auto cout = static_cast<std::size_t>(c.channels[static_cast<std::size_t>(l)]);
    for (Mode m : c.modes) {
      n += k * cin * 2 * cout + 2 * cout;   // tcn1
      n += k * cout * 2 * cout + 2 * cout;  // tcn2
      n += 2 * cout;                        // layer norm
      n += graph_convs_for(c, m).size() * (cout * cout + cout);
    }
  }
  const auto last = static_cast<std::size_t>(c.channels.back());
  const auto h = static_cast<std::size_t>(c.head_hidden);
  const auto rem = static_cast<std::size_t>(c.remaining_steps());
  n += c.modes.size() * (rem * last * h + h + h * h + h + h * 2 + 2);
  return n;
}

ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelState s;
  s.config = config;
  s.seed = seed;
  auto& p = s.params;
  const Eigen::Index k = config.kernel;
  for (int l = 0; l < config.blocks(); ++l) {
    const Eigen::Index cin = block_input_channels(config, l);
    const Eigen::Index cout = config.channels[static_cast<std::size_t>(l)];
    BlockParams b;
    for (Mode m : config.modes) {
      b.tcn1[m] = ConvParams::zeros(k * cin, 2 * cout);
      b.tcn2[m] = ConvParams::zeros(k * cout, 2 * cout);
      for (const auto& key : graph_convs_for(config, m)) b.graph[m][key] = ConvParams::zeros(cout, cout);
      b.norm[m] = {Eigen::MatrixXd::Ones(1, cout), Eigen::MatrixXd::Zero(1, cout)};
    }
    p.blocks.push_back(std::move(b));
  }
  const Eigen::Index last = config.channels.back();
  const Eigen::Index h = config.head_hidden;
  for (Mode m : config.modes) {
    p.heads[m] = {ConvParams::zeros(config.remaining_steps() * last, h), ConvParams::zeros(h, h),
                  ConvParams::zeros(h, 2)};
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (auto& ref : p.refs()) {
    if (!ref.decays) continue;
    Eigen::MatrixXd& w = *ref.value;
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = limit * unit(rng);
    }
  }
  if (p.scalar_count() != expected_parameter_count(config)) {
    throw std::logic_error("parameter census mismatch: built " + std::to_string(p.scalar_count()) + ", expected " +
                           std::to_string(expected_parameter_count(config)));
  }
  return s;
}

void check_compatible(const ModelConfig& config, const NormalizedGraphs& graphs) {
  if (graphs.modes != config.modes || graphs.target != config.target) {
    throw DataError("graph set modes/target (" + combination_label(graphs.modes) + ") do not match the model (" +
                    combination_label(config.modes) + ")");
  }
}

// ---------------------------------------------------------------------------
// Forward

double ForwardCache::kink_margin() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& b : blocks) {
    for (const auto& [mode, convs] : b.graph) {
      for (const auto& [key, c] : convs) m = std::min(m, c.kink_margin());
    }
  }
  for (const auto& [mode, h] : heads) {
    m = std::min(m, h.conv_pre.cwiseAbs().minCoeff());
    m = std::min(m, h.hidden_pre.cwiseAbs().minCoeff());
  }
  return m;
}

Predictions forward(const ModelState& model, const std::map<Mode, Hidden>& inputs, const NormalizedGraphs& graphs,
                    bool training, std::mt19937_64* rng, ForwardCache* cache) {
  const ModelConfig& cfg = model.config;
  check_compatible(cfg, graphs);
  std::map<Mode, Hidden> h;
  int batch = -1;
  for (Mode m : cfg.modes) {
    auto it = inputs.find(m);
    if (it == inputs.end()) throw DataError("missing input for mode '" + std::string(to_string(m)) + "'");
    const Hidden& x = it->second;
    if (x.steps != cfg.window) {
      throw DataError("input has " + std::to_string(x.steps) + " steps, model expects " + std::to_string(cfg.window));
    }
    if (x.channels() != cfg.input_channels || static_cast<std::size_t>(x.nodes) != graphs.nodes(m)) {
      throw DataError("input for '" + std::string(to_string(m)) + "' does not match the graph set node count");
    }
    if (batch >= 0 && x.batch != batch) throw DataError("modes disagree on batch size");
    batch = x.batch;
    h.emplace(m, x);
  }
  const bool drop = training && cfg.dropout > 0.0;
  if (drop && !rng) throw std::invalid_argument("dropout during training requires a random generator");
  if (cache) {
    cache->blocks.assign(static_cast<std::size_t>(cfg.blocks()), {});
    cache->heads.clear();
  }

  for (int l = 0; l < cfg.blocks(); ++l) {
    const BlockParams& bp = model.params.blocks[static_cast<std::size_t>(l)];
    BlockCache* bc = cache ? &cache->blocks[static_cast<std::size_t>(l)] : nullptr;
    std::map<Mode, Hidden> first;
    for (Mode m : cfg.modes) {
      first.emplace(m, ops::temporal_gated_conv(h.at(m), bp.tcn1.at(m), cfg.kernel, bc ? &bc->tcn1[m] : nullptr));
    }
    std::map<Mode, Hidden> next;
    for (Mode m : cfg.modes) {
      const Hidden& u = first.at(m);
      Hidden sum(u.batch, u.steps, u.nodes, u.channels());
      for (const auto& key : graph_convs_for(cfg, m)) {
        ops::GraphConvCache* gc = bc ? &bc->graph[m][key] : nullptr;
        const ConvParams& p = bp.graph.at(m).at(key);
        const Eigen::MatrixXd& a_self = graphs.get(m, m, key.kind);
        switch (key.role) {
          case ConvRole::intra:
            sum.data += ops::intra_modal_conv(u, a_self, p, gc).data;
            break;
          case ConvRole::similarity:
            sum.data += ops::inter_modal_similarity_conv(first.at(key.src), a_self, graphs.get(key.src, m, key.kind), p, gc)
                            .data;
            break;
          case ConvRole::difference:
            sum.data += ops::inter_modal_difference_conv(first.at(key.src), u, a_self, graphs.get(key.src, m, key.kind), p,
                                                         gc)
                            .data;
            break;
        }
      }
      Hidden residual = u;
      if (drop) {
        const double keep = 1.0 - cfg.dropout;
        std::bernoulli_distribution coin(keep);
        Eigen::MatrixXd mask(sum.data.rows(), sum.data.cols());
        for (Eigen::Index r = 0; r < mask.rows(); ++r) {
          for (Eigen::Index c = 0; c < mask.cols(); ++c) mask(r, c) = coin(*rng) ? 1.0 / keep : 0.0;
        }
        residual.data += sum.data.cwiseProduct(mask);
        if (bc) bc->dropout_mask[m] = std::move(mask);
      } else {
        residual.data += sum.data;
      }
      Hidden v = ops::temporal_gated_conv(residual, bp.tcn2.at(m), cfg.kernel, bc ? &bc->tcn2[m] : nullptr);
      Hidden y = ops::layer_norm(v, bp.norm.at(m), bc ? &bc->norm[m] : nullptr);
      if (bc) {
        bc->input[m] = h.at(m);
        bc->mrgnn[m] = std::move(sum);
        bc->second[m] = std::move(v);
        bc->output[m] = y;
      }
      next.emplace(m, std::move(y));
    }
    if (bc) bc->first = std::move(first);
    h = std::move(next);
  }

  Predictions out;
  for (Mode m : cfg.modes) {
    const HeadParams& hp = model.params.heads.at(m);
    const Hidden& x = h.at(m);
    Hidden z = ops::causal_linear(x, hp.conv, x.steps);  // one output step
    Eigen::MatrixXd a1 = z.data.cwiseMax(0.0);
    Eigen::MatrixXd pre2 = a1 * hp.hidden.weight;
    pre2.rowwise() += hp.hidden.bias.row(0);
    Eigen::MatrixXd a2 = pre2.cwiseMax(0.0);
    Eigen::MatrixXd y = a2 * hp.output.weight;
    y.rowwise() += hp.output.bias.row(0);
    if (cache) cache->heads[m] = {x, std::move(z.data), std::move(a1), std::move(pre2), std::move(a2)};
    out.emplace(m, std::move(y));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backward

ModelParams backward(const ModelState& model, const ForwardCache& cache, const NormalizedGraphs& graphs,
                     const Predictions& grad_predictions) {
  const ModelConfig& cfg = model.config;
  ModelParams grads = model.params.zeros_like();
  if (cache.blocks.size() != static_cast<std::size_t>(cfg.blocks())) {
    throw std::invalid_argument("forward cache does not belong to this model");
  }

  std::map<Mode, Hidden> dh;
  for (Mode m : cfg.modes) {
    const HeadParams& hp = model.params.heads.at(m);
    HeadParams& hg = grads.heads.at(m);
    const HeadCache& hc = cache.heads.at(m);
    auto it = grad_predictions.find(m);
    Eigen::MatrixXd dy = it != grad_predictions.end() ? it->second : Eigen::MatrixXd::Zero(hc.output_in.rows(), 2);
    if (dy.rows() != hc.output_in.rows() || dy.cols() != 2) throw std::invalid_argument("prediction gradient shape mismatch");

    hg.output.weight.noalias() += hc.output_in.transpose() * dy;
    hg.output.bias += dy.colwise().sum();
    Eigen::MatrixXd dpre2 = relu_backward(hc.hidden_pre, dy * hp.output.weight.transpose());
    hg.hidden.weight.noalias() += hc.hidden_in.transpose() * dpre2;
    hg.hidden.bias += dpre2.colwise().sum();
    Hidden dz;
    dz.batch = hc.input.batch;
    dz.steps = 1;
    dz.nodes = hc.input.nodes;
    dz.data = relu_backward(hc.conv_pre, dpre2 * hp.hidden.weight.transpose());
    Hidden dx(hc.input.batch, hc.input.steps, hc.input.nodes, hc.input.channels());
    ops::causal_linear_backward(hc.input, hp.conv, hc.input.steps, dz, hg.conv, &dx);
    dh.emplace(m, std::move(dx));
  }

  for (int l = cfg.blocks() - 1; l >= 0; --l) {
    const BlockParams& bp = model.params.blocks[static_cast<std::size_t>(l)];
    BlockParams& bg = grads.blocks[static_cast<std::size_t>(l)];
    const BlockCache& bc = cache.blocks[static_cast<std::size_t>(l)];

    std::map<Mode, Hidden> du;
    std::map<Mode, Hidden> dsum;
    for (Mode m : cfg.modes) {
      Hidden dv = ops::layer_norm_backward(bc.norm.at(m), bp.norm.at(m), dh.at(m), bg.norm.at(m));
      Hidden dr = ops::temporal_gated_conv_backward(bc.tcn2.at(m), bp.tcn2.at(m), cfg.kernel, dv, bg.tcn2.at(m));
      Hidden ds = dr;
      auto mask = bc.dropout_mask.find(m);
      if (mask != bc.dropout_mask.end()) ds.data = ds.data.cwiseProduct(mask->second);
      du.emplace(m, std::move(dr));
      dsum.emplace(m, std::move(ds));
    }
    for (Mode m : cfg.modes) {
      for (const auto& key : graph_convs_for(cfg, m)) {
        const ops::GraphConvCache& gc = bc.graph.at(m).at(key);
        const ConvParams& p = bp.graph.at(m).at(key);
        ConvParams& g = bg.graph.at(m).at(key);
        const Eigen::MatrixXd& a_self = graphs.get(m, m, key.kind);
        switch (key.role) {
          case ConvRole::intra:
            ops::intra_modal_conv_backward(gc, a_self, p, dsum.at(m), g, du.at(m));
            break;
          case ConvRole::similarity:
            ops::inter_modal_similarity_conv_backward(gc, a_self, graphs.get(key.src, m, key.kind), p, dsum.at(m), g,
                                                      du.at(key.src));
            break;
          case ConvRole::difference:
            ops::inter_modal_difference_conv_backward(gc, a_self, graphs.get(key.src, m, key.kind), p, dsum.at(m), g,
                                                      du.at(key.src), du.at(m));
            break;
        }
      }
    }
    std::map<Mode, Hidden> dprev;
    for (Mode m : cfg.modes) {
      dprev.emplace(m, ops::temporal_gated_conv_backward(bc.tcn1.at(m), bp.tcn1.at(m), cfg.kernel, du.at(m), bg.tcn1.at(m)));
    }
    dh = std::move(dprev);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Checkpoints

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j;
  std::vector<std::string> modes;
  for (Mode m : c.modes) modes.emplace_back(to_string(m));
  j["modes"] = modes;
  j["target"] = to_string(c.target);
  j["window"] = c.window;
  j["kernel"] = c.kernel;
  j["channels"] = c.channels;
  j["head_hidden"] = c.head_hidden;
  j["dropout"] = c.dropout;
  j["input_channels"] = c.input_channels;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.modes.clear();
  for (const auto& m : j.at("modes")) c.modes.push_back(parse_mode(m.get<std::string>()));
  c.target = parse_mode(j.at("target").get<std::string>());
  c.window = j.at("window").get<int>();
  c.kernel = j.at("kernel").get<int>();
  c.channels = j.at("channels").get<std::vector<int>>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.input_channels = j.at("input_channels").get<int>();
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  Archive a;
  a.magic.assign(kCheckpointMagic, 8);
  a.version = kCheckpointVersion;
  a.manifest["config"] = to_json(ckpt.model.config);
  a.manifest["seed"] = ckpt.model.seed;
  a.manifest["graph_fingerprint"] = hex_digest(ckpt.graph_fingerprint);
  a.manifest["epochs"] = ckpt.epochs;
  nlohmann::json stats = nlohmann::json::object();
  for (const auto& [m, s] : ckpt.stats) stats[std::string(to_string(m))] = {s.min, s.max};
  a.manifest["stats"] = stats;
  ModelParams params = ckpt.model.params;
  for (const auto& ref : params.refs()) a.arrays.emplace(ref.name, *ref.value);
  write_archive(a, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_fingerprint) {
  Archive a = read_archive(path, std::string_view(kCheckpointMagic, 8), kCheckpointVersion);
  Checkpoint ck;
  try {
    const ModelConfig config = model_config_from_json(a.manifest.at("config"));
    ck.model = init_model(config, a.manifest.at("seed").get<std::uint64_t>());
    ck.epochs = a.manifest.at("epochs").get<int>();
    const std::string fp = a.manifest.at("graph_fingerprint").get<std::string>();
    ck.graph_fingerprint = std::stoull(fp, nullptr, 16);
    for (const auto& [name, v] : a.manifest.at("stats").items()) {
      const Mode m = parse_mode(name);
      ck.stats[m] = {m, v.at(0).get<double>(), v.at(1).get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest malformed in '" + path.string() + "': " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint configuration invalid in '" + path.string() + "': " + e.what());
  }
  auto refs = ck.model.params.refs();
  if (refs.size() != a.arrays.size()) throw FormatError("checkpoint parameter census does not match its configuration");
  for (auto& ref : refs) {
    const Eigen::MatrixXd& v = a.array(ref.name);
    if (v.rows() != ref.value->rows() || v.cols() != ref.value->cols()) {
      throw FormatError("checkpoint parameter '" + ref.name + "' has the wrong shape");
    }
    *ref.value = v;
  }
  if (expected_fingerprint && *expected_fingerprint != ck.graph_fingerprint) {
    throw FormatError("checkpoint '" + path.string() + "' was trained on a different graph set");
  }
  return ck;
}

}  // namespace mrgnn
