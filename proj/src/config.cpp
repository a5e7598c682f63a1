#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "kfl/harness.hpp"

namespace kfl {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct RawConfig {
  // section -> key -> (value, line number)
  std::map<std::string, std::map<std::string, std::pair<std::string, int>>> data;

  bool take(const std::string& section, const std::string& key,
            std::string* out) {
    auto s = data.find(section);
    if (s == data.end()) return false;
    auto k = s->second.find(key);
    if (k == s->second.end()) return false;
    *out = k->second.first;
    s->second.erase(k);
    return true;
  }
};

RawConfig read_raw(std::istream& in) {
  RawConfig raw;
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw ConfigError("line " + std::to_string(lineno),
                          "unterminated section header '" + t + "'");
      }
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno),
                        "expected 'key = value', got '" + t + "'");
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (section.empty()) {
      throw ConfigError("line " + std::to_string(lineno),
                        "key '" + key + "' outside any [section]");
    }
    raw.data[section][key] = {value, lineno};
  }
  return raw;
}

double to_double(const std::string& field, const std::string& v) {
  try {
    size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(field, "cannot parse '" + v + "' as a number");
  }
}

long to_long(const std::string& field, const std::string& v) {
  try {
    size_t used = 0;
    long x = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(field, "cannot parse '" + v + "' as an integer");
  }
}

template <typename T, typename F>
std::vector<T> to_list(const std::string& field, const std::string& v, F conv) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(conv(field, item));
  }
  return out;
}

}  // namespace

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
double dbm_to_watt(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

ExperimentConfig parse_config(std::istream& in) {
  RawConfig raw = read_raw(in);
  ExperimentConfig cfg;
  std::string v;

  auto num = [&](const char* sec, const char* key, double& slot) {
    if (raw.take(sec, key, &v)) slot = to_double(std::string(sec) + "." + key, v);
  };
  auto integer = [&](const char* sec, const char* key, int& slot) {
    if (raw.take(sec, key, &v)) {
      slot = static_cast<int>(to_long(std::string(sec) + "." + key, v));
    }
  };
  auto longint = [&](const char* sec, const char* key, long& slot) {
    if (raw.take(sec, key, &v)) slot = to_long(std::string(sec) + "." + key, v);
  };
  auto text = [&](const char* sec, const char* key, std::string& slot) {
    if (raw.take(sec, key, &v)) slot = v;
  };

  if (raw.take("experiment", "seed", &v)) {
    cfg.seed = static_cast<uint64_t>(to_long("experiment.seed", v));
  }
  integer("experiment", "horizon", cfg.horizon);
  text("experiment", "scheduler", cfg.scheduler_kind);
  text("experiment", "pattern", cfg.pattern);
  num("experiment", "tradeoff_v", cfg.tradeoff_v);
  num("experiment", "deadline_s", cfg.deadline_s);
  integer("experiment", "eval_interval", cfg.eval_interval);
  text("experiment", "output", cfg.output_path);

  num("channel", "bandwidth_hz", cfg.bandwidth_hz);
  num("channel", "path_loss_const_db", cfg.path_loss_const_db);
  num("channel", "ref_distance_m", cfg.ref_distance_m);
  num("channel", "path_loss_exp", cfg.path_loss_exp);
  num("channel", "noise_psd_dbm_hz", cfg.noise_psd_dbm_hz);

  integer("devices", "count", cfg.devices);
  if (raw.take("devices", "cpu_freq_ghz", &v)) {
    cfg.cpu_freq_ghz = to_list<double>("devices.cpu_freq_ghz", v, to_double);
  }
  num("devices", "flops_per_cycle", cfg.flops_per_cycle);
  num("devices", "power_coeff", cfg.power_coeff);
  num("devices", "max_power_dbm", cfg.max_power_dbm);
  num("devices", "energy_budget_j", cfg.energy_budget_j);
  num("devices", "energy_budget_per_round_j", cfg.energy_budget_per_round_j);
  num("devices", "cell_radius_m", cfg.cell_radius_m);
  num("devices", "min_distance_m", cfg.min_distance_m);
  num("devices", "flops_per_sample", cfg.flops_per_sample);

  integer("payload", "bits_per_param", cfg.bits_per_param);
  longint("payload", "model_params", cfg.model_params);

  text("dataset", "kind", cfg.dataset);
  integer("dataset", "classes", cfg.classes);
  integer("dataset", "input_dim", cfg.input_dim);
  integer("dataset", "per_class", cfg.per_class);
  integer("dataset", "test_per_class", cfg.test_per_class);
  num("dataset", "cluster_spread", cfg.cluster_spread);
  integer("dataset", "classes_per_device", cfg.classes_per_device);
  text("dataset", "mnist_dir", cfg.mnist_dir);

  integer("model", "feature_dim", cfg.feature_dim);
  auto to_int = [](const std::string& f, const std::string& s) {
    return static_cast<int>(to_long(f, s));
  };
  if (raw.take("model", "hidden_dims", &v)) {
    cfg.hidden_dims = to_list<int>("model.hidden_dims", v, to_int);
  }
  if (raw.take("model", "hidden_choices", &v)) {
    cfg.hidden_choices = to_list<int>("model.hidden_choices", v, to_int);
  }

  num("hyper", "lr_extractor", cfg.hp.lr_extractor);
  num("hyper", "lr_predictor", cfg.hp.lr_predictor);
  num("hyper", "knowledge_weight", cfg.hp.knowledge_weight);
  integer("hyper", "local_iters", cfg.hp.local_iters);
  num("hyper", "momentum", cfg.hp.momentum);

  integer("scheduler", "round_robin_window", cfg.round_robin_window);
  integer("scheduler", "pattern_min", cfg.pattern_min);
  integer("scheduler", "pattern_max", cfg.pattern_max);
  integer("scheduler", "pattern_uniform", cfg.pattern_uniform);

  // Anything still present is a typo worth failing loudly on.
  for (const auto& [section, entries] : raw.data) {
    for (const auto& [key, entry] : entries) {
      throw ConfigError(section + "." + key,
                        "unknown key (line " + std::to_string(entry.second) +
                            ")");
    }
  }

  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("file", "cannot open '" + path + "'");
  return parse_config(in);
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.devices <= 0) {
    throw ConfigError("devices.count", "required and must be positive");
  }
  if (cfg.horizon < 1) throw ConfigError("experiment.horizon", "must be >= 1");
  if (cfg.scheduler_kind != "proposed" && cfg.scheduler_kind != "round_robin" &&
      cfg.scheduler_kind != "myopic" && cfg.scheduler_kind != "pattern") {
    throw ConfigError("experiment.scheduler",
                      "unknown scheduler '" + cfg.scheduler_kind + "'");
  }
  if (cfg.pattern != "uniform" && cfg.pattern != "ascend" &&
      cfg.pattern != "descend") {
    throw ConfigError("experiment.pattern",
                      "unknown pattern '" + cfg.pattern + "'");
  }
  if (cfg.tradeoff_v < 0) throw ConfigError("experiment.tradeoff_v", "must be >= 0");
  if (cfg.deadline_s <= 0) throw ConfigError("experiment.deadline_s", "must be > 0");
  if (cfg.eval_interval < 1) throw ConfigError("experiment.eval_interval", "must be >= 1");
  if (cfg.bandwidth_hz <= 0) throw ConfigError("channel.bandwidth_hz", "must be > 0");
  if (cfg.path_loss_exp < 1) throw ConfigError("channel.path_loss_exp", "must be >= 1");
  if (cfg.cpu_freq_ghz.empty()) {
    throw ConfigError("devices.cpu_freq_ghz", "needs at least one frequency");
  }
  if (cfg.dataset != "synthetic" && cfg.dataset != "mnist") {
    throw ConfigError("dataset.kind", "unknown dataset '" + cfg.dataset + "'");
  }
  if (cfg.dataset == "mnist" && cfg.mnist_dir.empty()) {
    throw ConfigError("dataset.mnist_dir", "required for dataset.kind = mnist");
  }
  if (cfg.classes < 2) throw ConfigError("dataset.classes", "must be >= 2");
  if (cfg.classes_per_device < 1 || cfg.classes_per_device > cfg.classes) {
    throw ConfigError("dataset.classes_per_device",
                      "must be in [1, dataset.classes]");
  }
  if ((static_cast<long>(cfg.classes_per_device) * cfg.devices) % cfg.classes != 0) {
    throw ConfigError("dataset.classes_per_device",
                      "classes_per_device*devices must be divisible by "
                      "dataset.classes");
  }
  if (cfg.feature_dim < 1) throw ConfigError("model.feature_dim", "must be >= 1");
  if (cfg.hp.lr_extractor <= 0) throw ConfigError("hyper.lr_extractor", "must be > 0");
  if (cfg.hp.lr_predictor <= 0) throw ConfigError("hyper.lr_predictor", "must be > 0");
  if (cfg.hp.knowledge_weight < 0) throw ConfigError("hyper.knowledge_weight", "must be >= 0");
  if (cfg.hp.local_iters < 1) throw ConfigError("hyper.local_iters", "must be >= 1");
  if (cfg.hp.momentum < 0 || cfg.hp.momentum >= 1) {
    throw ConfigError("hyper.momentum", "must be in [0, 1)");
  }
  if (cfg.bits_per_param < 1) throw ConfigError("payload.bits_per_param", "must be >= 1");
  if (cfg.round_robin_window < 1) {
    throw ConfigError("scheduler.round_robin_window", "must be >= 1");
  }
  if (cfg.pattern_min < 1 || cfg.pattern_max < cfg.pattern_min) {
    throw ConfigError("scheduler.pattern_min",
                      "need 1 <= pattern_min <= pattern_max");
  }
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  auto list_d = [](const std::vector<double>& xs) {
    std::ostringstream s;
    s.precision(17);
    for (size_t i = 0; i < xs.size(); ++i) s << (i ? "," : "") << xs[i];
    return s.str();
  };
  auto list_i = [](const std::vector<int>& xs) {
    std::ostringstream s;
    for (size_t i = 0; i < xs.size(); ++i) s << (i ? "," : "") << xs[i];
    return s.str();
  };

  out << "[experiment]\n";
  out << "seed = " << cfg.seed << "\n";
  out << "horizon = " << cfg.horizon << "\n";
  out << "scheduler = " << cfg.scheduler_kind << "\n";
  out << "pattern = " << cfg.pattern << "\n";
  out << "tradeoff_v = " << cfg.tradeoff_v << "\n";
  out << "deadline_s = " << cfg.deadline_s << "\n";
  out << "eval_interval = " << cfg.eval_interval << "\n";
  out << "output = " << cfg.output_path << "\n";
  out << "\n[channel]\n";
  out << "bandwidth_hz = " << cfg.bandwidth_hz << "\n";
  out << "path_loss_const_db = " << cfg.path_loss_const_db << "\n";
  out << "ref_distance_m = " << cfg.ref_distance_m << "\n";
  out << "path_loss_exp = " << cfg.path_loss_exp << "\n";
  out << "noise_psd_dbm_hz = " << cfg.noise_psd_dbm_hz << "\n";
  out << "\n[devices]\n";
  out << "count = " << cfg.devices << "\n";
  out << "cpu_freq_ghz = " << list_d(cfg.cpu_freq_ghz) << "\n";
  out << "flops_per_cycle = " << cfg.flops_per_cycle << "\n";
  out << "power_coeff = " << cfg.power_coeff << "\n";
  out << "max_power_dbm = " << cfg.max_power_dbm << "\n";
  out << "energy_budget_j = " << cfg.energy_budget_j << "\n";
  out << "energy_budget_per_round_j = " << cfg.energy_budget_per_round_j << "\n";
  out << "cell_radius_m = " << cfg.cell_radius_m << "\n";
  out << "min_distance_m = " << cfg.min_distance_m << "\n";
  out << "flops_per_sample = " << cfg.flops_per_sample << "\n";
  out << "\n[payload]\n";
  out << "bits_per_param = " << cfg.bits_per_param << "\n";
  out << "model_params = " << cfg.model_params << "\n";
  out << "\n[dataset]\n";
  out << "kind = " << cfg.dataset << "\n";
  out << "classes = " << cfg.classes << "\n";
  out << "input_dim = " << cfg.input_dim << "\n";
  out << "per_class = " << cfg.per_class << "\n";
  out << "test_per_class = " << cfg.test_per_class << "\n";
  out << "cluster_spread = " << cfg.cluster_spread << "\n";
  out << "classes_per_device = " << cfg.classes_per_device << "\n";
  if (!cfg.mnist_dir.empty()) out << "mnist_dir = " << cfg.mnist_dir << "\n";
  out << "\n[model]\n";
  out << "feature_dim = " << cfg.feature_dim << "\n";
  out << "hidden_dims = " << list_i(cfg.hidden_dims) << "\n";
  if (!cfg.hidden_choices.empty()) {
    out << "hidden_choices = " << list_i(cfg.hidden_choices) << "\n";
  }
  out << "\n[hyper]\n";
  out << "lr_extractor = " << cfg.hp.lr_extractor << "\n";
  out << "lr_predictor = " << cfg.hp.lr_predictor << "\n";
  out << "knowledge_weight = " << cfg.hp.knowledge_weight << "\n";
  out << "local_iters = " << cfg.hp.local_iters << "\n";
  out << "momentum = " << cfg.hp.momentum << "\n";
  out << "\n[scheduler]\n";
  out << "round_robin_window = " << cfg.round_robin_window << "\n";
  out << "pattern_min = " << cfg.pattern_min << "\n";
  out << "pattern_max = " << cfg.pattern_max << "\n";
  out << "pattern_uniform = " << cfg.pattern_uniform << "\n";
  return out.str();
}

}  // namespace kfl
