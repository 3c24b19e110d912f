#include "mrgnn/config.hpp"

#include <fstream>
#include <set>

namespace mrgnn {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::string& section, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown config key '" + section + (section.empty() ? "" : ".") + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : (base / path).lexically_normal();
}

Timestamp timestamp_field(const json& j, const char* key) {
  const auto text = j.at(key).get<std::string>();
  auto t = parse_timestamp(text);
  if (!t) throw ConfigError(std::string("config field '") + key + "' is not an ISO-8601 timestamp: " + text);
  return *t;
}

std::vector<Mode> modes_field(const json& j) {
  std::vector<Mode> out;
  for (const auto& m : j) out.push_back(parse_mode(m.get<std::string>()));
  return out;
}

}  // namespace

void ExperimentConfig::validate(bool require_sources) const {
  if (canonical_modes(modes).size() != modes.size() || modes.empty()) throw ConfigError("modes must be a nonempty distinct list");
  if (std::find(modes.begin(), modes.end(), target) == modes.end()) throw ConfigError("modes must include the target mode");
  if (bin_width <= 0) throw ConfigError("bin_hours must be positive");
  if (window < 1) throw ConfigError("window must be at least 1");
  if (graph.top_k < 1) throw ConfigError("graph.top_k must be at least 1");
  if (!(graph.geo.epsilon >= 0.0 && graph.geo.epsilon <= 1.0)) throw ConfigError("graph.epsilon must lie in [0, 1]");
  if (filters.min_orders_per_hour < 0) throw ConfigError("filters.bike_min_orders_per_hour must be nonnegative");
  if (filters.max_zero_run < 1) throw ConfigError("filters.subway_max_zero_run must be at least 1");
  double sum = 0.0;
  for (double r : splits) {
    if (!(r > 0)) throw ConfigError("split ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  ModelConfig m = model;
  m.modes = canonical_modes(modes);
  m.target = target;
  m.window = window;
  m.dropout = train.dropout;
  m.validate();
  train.validate();
  synth.validate();
  if (!require_sources) return;
  if (!span_start || !span_end) throw ConfigError("span.start and span.end are required for ingestion");
  Span{*span_start, *span_end, bin_width}.bins();
  for (Mode mode : modes) {
    auto it = sources.find(mode);
    if (it == sources.end()) throw ConfigError("no data source configured for mode '" + std::string(to_string(mode)) + "'");
    for (const auto& p : {it->second.records, it->second.nodes}) {
      if (!std::filesystem::exists(p)) throw ConfigError("configured path does not exist: " + p.string());
    }
  }
}

ExperimentSpec ExperimentConfig::experiment_spec() const {
  ExperimentSpec spec;
  spec.model = model;
  spec.model.modes = canonical_modes(modes);
  spec.model.target = target;
  spec.model.window = window;
  spec.model.dropout = train.dropout;
  spec.train = train;
  spec.graph = graph;
  return spec;
}

ExperimentConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  try {
    reject_unknown(j, "", {"target", "modes", "data", "span", "bin_hours", "splits", "window", "filters", "graph", "model",
                           "train", "seeds", "out", "synth"});
    if (j.contains("target")) c.target = parse_mode(j.at("target").get<std::string>());
    if (j.contains("modes")) c.modes = modes_field(j.at("modes"));
    if (j.contains("data")) {
      for (const auto& [name, src] : j.at("data").items()) {
        const Mode m = parse_mode(name);
        reject_unknown(src, "data." + name, {"records", "nodes", "schema"});
        ModeSource s;
        s.records = resolve(base_dir, src.at("records").get<std::string>());
        s.nodes = resolve(base_dir, src.at("nodes").get<std::string>());
        if (src.contains("schema")) {
          const auto schema = src.at("schema").get<std::string>();
          if (schema == "cumulative") {
            s.schema = CountSchema::cumulative;
          } else if (schema == "delta") {
            s.schema = CountSchema::delta;
          } else {
            throw ConfigError("data." + name + ".schema must be 'cumulative' or 'delta'");
          }
        }
        c.sources[m] = s;
      }
    }
    if (j.contains("span")) {
      const auto& s = j.at("span");
      reject_unknown(s, "span", {"start", "end"});
      c.span_start = timestamp_field(s, "start");
      c.span_end = timestamp_field(s, "end");
    }
    if (j.contains("bin_hours")) {
      const double hours = j.at("bin_hours").get<double>();
      c.bin_width = static_cast<std::int64_t>(std::llround(hours * 3600.0));
    }
    if (j.contains("splits")) {
      auto v = j.at("splits").get<std::vector<double>>();
      if (v.size() != 3) throw ConfigError("splits must have three ratios");
      c.splits = {v[0], v[1], v[2]};
    }
    read(j, "window", c.window);
    if (j.contains("filters")) {
      const auto& f = j.at("filters");
      reject_unknown(f, "filters", {"bike_min_orders_per_hour", "subway_max_zero_run"});
      read(f, "bike_min_orders_per_hour", c.filters.min_orders_per_hour);
      read(f, "subway_max_zero_run", c.filters.max_zero_run);
    }
    if (j.contains("graph")) {
      const auto& g = j.at("graph");
      reject_unknown(g, "graph", {"epsilon", "top_k"});
      read(g, "epsilon", c.graph.geo.epsilon);
      read(g, "top_k", c.graph.top_k);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      reject_unknown(m, "model", {"channels", "kernel", "head_hidden"});
      read(m, "channels", c.model.channels);
      read(m, "kernel", c.model.kernel);
      read(m, "head_hidden", c.model.head_hidden);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      reject_unknown(t, "train", {"learning_rate", "batch_size", "max_epochs", "dropout", "weight_decay", "patience",
                                  "aux_weight"});
      read(t, "learning_rate", c.train.learning_rate);
      read(t, "batch_size", c.train.batch_size);
      read(t, "max_epochs", c.train.max_epochs);
      read(t, "dropout", c.train.dropout);
      read(t, "weight_decay", c.train.weight_decay);
      read(t, "patience", c.train.patience);
      read(t, "aux_weight", c.train.aux_weight);
    }
    if (j.contains("seeds")) c.train.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("out")) c.out_dir = resolve(base_dir, j.at("out").get<std::string>());
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      reject_unknown(s, "synth", {"bike_nodes", "subway_nodes", "ridehail_nodes", "bins", "start", "bike_base",
                                  "subway_base", "ridehail_base", "daily_amplitude", "noise", "alpha", "subway_volatility",
                                  "subway_persistence", "region", "link_radius", "seed"});
      auto& sp = c.synth;
      read(s, "bike_nodes", sp.bike_nodes);
      read(s, "subway_nodes", sp.subway_nodes);
      read(s, "ridehail_nodes", sp.ridehail_nodes);
      read(s, "bins", sp.bins);
      if (s.contains("start")) sp.start = timestamp_field(s, "start");
      read(s, "bike_base", sp.bike_base);
      read(s, "subway_base", sp.subway_base);
      read(s, "ridehail_base", sp.ridehail_base);
      read(s, "daily_amplitude", sp.daily_amplitude);
      read(s, "noise", sp.noise);
      read(s, "alpha", sp.alpha);
      read(s, "subway_volatility", sp.subway_volatility);
      read(s, "subway_persistence", sp.subway_persistence);
      read(s, "region", sp.region);
      read(s, "link_radius", sp.link_radius);
      read(s, "seed", c.synth_seed);
    }
    c.synth.bin_width = c.bin_width;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  c.validate(false);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["target"] = to_string(c.target);
  std::vector<std::string> modes;
  for (Mode m : c.modes) modes.emplace_back(to_string(m));
  j["modes"] = modes;
  json data = json::object();
  for (const auto& [m, s] : c.sources) {
    json src{{"records", s.records.string()}, {"nodes", s.nodes.string()}};
    if (m == Mode::subway) src["schema"] = s.schema == CountSchema::cumulative ? "cumulative" : "delta";
    data[std::string(to_string(m))] = src;
  }
  j["data"] = data;
  if (c.span_start && c.span_end) j["span"] = {{"start", format_timestamp(*c.span_start)}, {"end", format_timestamp(*c.span_end)}};
  j["bin_hours"] = static_cast<double>(c.bin_width) / 3600.0;
  j["splits"] = c.splits;
  j["window"] = c.window;
  j["filters"] = {{"bike_min_orders_per_hour", c.filters.min_orders_per_hour},
                  {"subway_max_zero_run", c.filters.max_zero_run}};
  j["graph"] = {{"epsilon", c.graph.geo.epsilon}, {"top_k", c.graph.top_k}};
  j["model"] = {{"channels", c.model.channels}, {"kernel", c.model.kernel}, {"head_hidden", c.model.head_hidden}};
  j["train"] = {{"learning_rate", c.train.learning_rate}, {"batch_size", c.train.batch_size},
                {"max_epochs", c.train.max_epochs},       {"dropout", c.train.dropout},
                {"weight_decay", c.train.weight_decay},   {"patience", c.train.patience},
                {"aux_weight", c.train.aux_weight}};
  j["seeds"] = c.train.seeds;
  j["out"] = c.out_dir.string();
  const auto& s = c.synth;
  j["synth"] = {{"bike_nodes", s.bike_nodes},
                {"subway_nodes", s.subway_nodes},
                {"ridehail_nodes", s.ridehail_nodes},
                {"bins", s.bins},
                {"start", format_timestamp(s.start)},
                {"bike_base", s.bike_base},
                {"subway_base", s.subway_base},
                {"ridehail_base", s.ridehail_base},
                {"daily_amplitude", s.daily_amplitude},
                {"noise", s.noise},
                {"alpha", s.alpha},
                {"subway_volatility", s.subway_volatility},
                {"subway_persistence", s.subway_persistence},
                {"region", s.region},
                {"link_radius", s.link_radius},
                {"seed", c.synth_seed}};
  return j;
}

}  // namespace mrgnn
