#include "asyncflow/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace af {

namespace {

std::string fmt_g17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

Vec parse_vec(const std::string& s, const std::string& where) {
  std::vector<double> vals;
  std::stringstream ss(s);
  double x;
  while (ss >> x) vals.push_back(x);
  require(!vals.empty() && ss.eof(), "config: cannot parse vector in " + where);
  Vec v(static_cast<Eigen::Index>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) v[static_cast<Eigen::Index>(i)] = vals[i];
  return v;
}

std::string vec_to_string(const Vec& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += " ";
    out += fmt_g17(v[i]);
  }
  return out;
}

struct KvReader {
  std::map<std::string, std::string> kv;
  std::set<std::string> used;

  bool has(const std::string& key) const { return kv.count(key) > 0; }
  std::string get(const std::string& key) {
    auto it = kv.find(key);
    require(it != kv.end(), "config: missing key '" + key + "'");
    used.insert(key);
    return it->second;
  }
  void get_if(const std::string& key, std::string& out) {
    if (has(key)) out = get(key);
  }
  void get_if(const std::string& key, double& out) {
    if (!has(key)) return;
    const std::string s = get(key);
    try {
      std::size_t pos = 0;
      out = std::stod(s, &pos);
      require(pos == s.size(), "");
    } catch (const std::exception&) {
      throw UsageError("config: bad number for '" + key + "'");
    }
  }
  void get_if(const std::string& key, int& out) {
    if (!has(key)) return;
    const std::string s = get(key);
    try {
      std::size_t pos = 0;
      out = std::stoi(s, &pos);
      require(pos == s.size(), "");
    } catch (const std::exception&) {
      throw UsageError("config: bad integer for '" + key + "'");
    }
  }
  void get_if(const std::string& key, std::uint64_t& out) {
    if (!has(key)) return;
    const std::string s = get(key);
    try {
      std::size_t pos = 0;
      out = std::stoull(s, &pos);
      require(pos == s.size(), "");
    } catch (const std::exception&) {
      throw UsageError("config: bad integer for '" + key + "'");
    }
  }
  void finish(const std::string& section) const {
    for (const auto& [key, value] : kv)
      require(used.count(key) > 0,
              "config: unknown key '" + key + "' in section [" + section + "]");
  }
};

}  // namespace

std::string field_kind_name(FieldKind k) {
  switch (k) {
    case FieldKind::learned: return "learned";
    case FieldKind::analytic_point: return "analytic-point";
    case FieldKind::analytic_mixture: return "analytic-mixture";
  }
  throw UsageError("unknown field kind");
}

std::string bound_mode_name(BoundMode m) {
  return m == BoundMode::standard ? "standard" : "lifted";
}

void RunConfig::validate() const {
  target.validate();
  require(grid_steps >= 1, "config: grid steps must be positive");
  require(eval_rollouts >= 2, "config: eval rollouts must be at least 2");
  train.validate();
  make_async().validate();
  make_tpm_config().validate();
  make_field_config().validate();
  if (field_kind == FieldKind::analytic_point)
    require(target.components() == 1,
            "config: analytic-point field needs a single-component target");
}

TimeGrid RunConfig::make_grid() const {
  return grid_kind == GridKind::uniform ? TimeGrid::uniform(grid_steps)
                                        : TimeGrid::shifted(grid_steps, grid_shift);
}

AsyncConfig RunConfig::make_async() const {
  AsyncConfig a;
  a.gamma = gamma;
  a.bound = bound;
  a.sigma_min = sigma_min;
  a.k_max = k_max;
  return a;
}

TPMConfig RunConfig::make_tpm_config() const {
  TPMConfig t;
  t.dim = target.dim();
  t.patch = tpm_patch;
  t.width = tpm_width;
  t.layers = tpm_layers;
  t.heads = tpm_heads;
  t.ff_width = tpm_ff_width;
  t.global_tokens = tpm_global_tokens;
  t.n_classes = target.components();
  t.k_max = k_max;
  return t;
}

FieldConfig RunConfig::make_field_config() const {
  FieldConfig f;
  f.dim = target.dim();
  f.hidden = field_hidden;
  f.layers = field_layers;
  f.cond_embed = field_cond_embed;
  f.n_classes = target.components();
  return f;
}

RewardSpec RunConfig::make_reward_spec() const {
  RewardSpec spec = RewardSpec::default_four(target);
  spec.eps_z = train.eps_z;
  spec.noise_reference = noise_reference;
  return spec;
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  os << "[run]\n";
  os << "seed = " << seed << "\n";
  os << "out = " << out_dir << "\n";
  os << "\n[target]\n";
  std::string means, variances, weights;
  for (int j = 0; j < target.components(); ++j) {
    if (j) {
      means += " | ";
      variances += " | ";
      weights += " ";
    }
    means += vec_to_string(target.means[static_cast<std::size_t>(j)]);
    variances += vec_to_string(target.variances[static_cast<std::size_t>(j)]);
    weights += fmt_g17(target.weights[static_cast<std::size_t>(j)]);
  }
  os << "means = " << means << "\n";
  os << "variances = " << variances << "\n";
  os << "weights = " << weights << "\n";
  os << "\n[field]\n";
  os << "kind = " << field_kind_name(field_kind) << "\n";
  os << "hidden = " << field_hidden << "\n";
  os << "layers = " << field_layers << "\n";
  os << "cond_embed = " << field_cond_embed << "\n";
  os << "pretrain_iters = " << pretrain_iters << "\n";
  os << "pretrain_batch = " << pretrain_batch << "\n";
  os << "pretrain_lr = " << fmt_g17(pretrain_lr) << "\n";
  os << "cond_drop = " << fmt_g17(cond_drop) << "\n";
  os << "\n[grid]\n";
  os << "steps = " << grid_steps << "\n";
  os << "kind = " << (grid_kind == GridKind::uniform ? "uniform" : "shifted") << "\n";
  os << "shift = " << fmt_g17(grid_shift) << "\n";
  os << "\n[sampler]\n";
  os << "k_max = " << k_max << "\n";
  os << "sigma_min = " << fmt_g17(sigma_min) << "\n";
  os << "guidance = " << fmt_g17(guidance) << "\n";
  os << "gamma = " << fmt_g17(gamma) << "\n";
  os << "bound = " << bound_mode_name(bound) << "\n";
  os << "\n[tpm]\n";
  os << "patch = " << tpm_patch << "\n";
  os << "width = " << tpm_width << "\n";
  os << "layers = " << tpm_layers << "\n";
  os << "heads = " << tpm_heads << "\n";
  os << "ff_width = " << tpm_ff_width << "\n";
  os << "global_tokens = " << tpm_global_tokens << "\n";
  os << "\n[train]\n";
  os << "iterations = " << train.iterations << "\n";
  os << "group = " << train.group_size << "\n";
  os << "minibatch = " << train.minibatch << "\n";
  os << "clip = " << fmt_g17(train.clip_eps) << "\n";
  os << "lr = " << fmt_g17(train.lr) << "\n";
  os << "grad_clip = " << fmt_g17(train.grad_clip) << "\n";
  os << "epochs = " << train.epochs << "\n";
  os << "eps_z = " << fmt_g17(train.eps_z) << "\n";
  os << "checkpoint_every = " << train.checkpoint_every << "\n";
  os << "\n[rewards]\n";
  os << "noise_reference = " << fmt_g17(noise_reference) << "\n";
  os << "\n[eval]\n";
  os << "rollouts = " << eval_rollouts << "\n";
  return os.str();
}

std::uint64_t RunConfig::content_hash() const {
  const std::string s = serialize();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RunConfig RunConfig::parse(const std::string& text) {
  std::map<std::string, KvReader> sections;
  std::string current;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      require(line.back() == ']', "config: malformed section header at line " +
                                      std::to_string(lineno));
      current = trim(line.substr(1, line.size() - 2));
      require(!current.empty(), "config: empty section name at line " +
                                    std::to_string(lineno));
      require(sections.emplace(current, KvReader{}).second,
              "config: duplicate section [" + current + "]");
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos,
            "config: expected key = value at line " + std::to_string(lineno));
    require(!current.empty(),
            "config: key outside any section at line " + std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    require(sections[current].kv.emplace(key, value).second,
            "config: duplicate key '" + key + "' in section [" + current + "]");
  }

  static const std::set<std::string> known = {"run",  "target", "field",
                                              "grid", "sampler", "tpm",
                                              "train", "rewards", "eval"};
  for (const auto& [name, kv] : sections)
    require(known.count(name) > 0, "config: unknown section [" + name + "]");

  RunConfig cfg;

  KvReader& run = sections["run"];
  run.get_if("seed", cfg.seed);
  run.get_if("out", cfg.out_dir);
  run.finish("run");

  KvReader& target = sections["target"];
  if (target.has("means") || target.has("variances") || target.has("weights")) {
    const auto mean_parts = split(target.get("means"), '|');
    const auto var_parts = split(target.get("variances"), '|');
    require(mean_parts.size() == var_parts.size(),
            "config: means and variances disagree on component count");
    std::stringstream ws(target.get("weights"));
    MixtureSpec mix;
    for (std::size_t j = 0; j < mean_parts.size(); ++j) {
      mix.means.push_back(parse_vec(mean_parts[j], "[target] means"));
      mix.variances.push_back(parse_vec(var_parts[j], "[target] variances"));
      double w;
      require(static_cast<bool>(ws >> w), "config: too few weights");
      mix.weights.push_back(w);
    }
    double extra;
    require(!(ws >> extra), "config: too many weights");
    cfg.target = std::move(mix);
  }
  target.finish("target");

  KvReader& field = sections["field"];
  if (field.has("kind")) {
    const std::string kind = field.get("kind");
    if (kind == "learned") cfg.field_kind = FieldKind::learned;
    else if (kind == "analytic-point") cfg.field_kind = FieldKind::analytic_point;
    else if (kind == "analytic-mixture") cfg.field_kind = FieldKind::analytic_mixture;
    else throw UsageError("config: unknown field kind '" + kind + "'");
  }
  field.get_if("hidden", cfg.field_hidden);
  field.get_if("layers", cfg.field_layers);
  field.get_if("cond_embed", cfg.field_cond_embed);
  field.get_if("pretrain_iters", cfg.pretrain_iters);
  field.get_if("pretrain_batch", cfg.pretrain_batch);
  field.get_if("pretrain_lr", cfg.pretrain_lr);
  field.get_if("cond_drop", cfg.cond_drop);
  field.finish("field");

  KvReader& grid = sections["grid"];
  grid.get_if("steps", cfg.grid_steps);
  if (grid.has("kind")) {
    const std::string kind = grid.get("kind");
    if (kind == "uniform") cfg.grid_kind = GridKind::uniform;
    else if (kind == "shifted") cfg.grid_kind = GridKind::shifted;
    else throw UsageError("config: unknown grid kind '" + kind + "'");
  }
  grid.get_if("shift", cfg.grid_shift);
  grid.finish("grid");

  KvReader& sampler = sections["sampler"];
  sampler.get_if("k_max", cfg.k_max);
  sampler.get_if("sigma_min", cfg.sigma_min);
  sampler.get_if("guidance", cfg.guidance);
  sampler.get_if("gamma", cfg.gamma);
  if (sampler.has("bound")) {
    const std::string mode = sampler.get("bound");
    if (mode == "standard") cfg.bound = BoundMode::standard;
    else if (mode == "lifted") cfg.bound = BoundMode::lifted;
    else throw UsageError("config: unknown bound mode '" + mode + "'");
  }
  sampler.finish("sampler");

  KvReader& tpm = sections["tpm"];
  tpm.get_if("patch", cfg.tpm_patch);
  tpm.get_if("width", cfg.tpm_width);
  tpm.get_if("layers", cfg.tpm_layers);
  tpm.get_if("heads", cfg.tpm_heads);
  tpm.get_if("ff_width", cfg.tpm_ff_width);
  tpm.get_if("global_tokens", cfg.tpm_global_tokens);
  tpm.finish("tpm");

  KvReader& train = sections["train"];
  train.get_if("iterations", cfg.train.iterations);
  train.get_if("group", cfg.train.group_size);
  train.get_if("minibatch", cfg.train.minibatch);
  train.get_if("clip", cfg.train.clip_eps);
  train.get_if("lr", cfg.train.lr);
  train.get_if("grad_clip", cfg.train.grad_clip);
  train.get_if("epochs", cfg.train.epochs);
  train.get_if("eps_z", cfg.train.eps_z);
  train.get_if("checkpoint_every", cfg.train.checkpoint_every);
  train.finish("train");

  KvReader& rewards = sections["rewards"];
  rewards.get_if("noise_reference", cfg.noise_reference);
  rewards.finish("rewards");

  KvReader& eval = sections["eval"];
  eval.get_if("rollouts", cfg.eval_rollouts);
  eval.finish("eval");

  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

}  // namespace af
