#include "overtrain/harness/config.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "overtrain/format.h"
#include "overtrain/seeding.h"

namespace overtrain::harness {
namespace {

using json = nlohmann::json;

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::uint64_t kTaskSeedTag = 0x7461736bULL;

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const std::string& s : items) out += "\n  " + s;
  return out;
}

class Reader {
 public:
  std::vector<std::string> errors;

  void fail(const std::string& path, const std::string& message) { errors.push_back(path + ": " + message); }

  // Reports keys outside `allowed`; returns false when `node` is not an object.
  bool object(const json& node, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!node.is_object()) {
      fail(path, "expected an object");
      return false;
    }
    for (const auto& item : node.items()) {
      const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; });
      if (!known) fail(join_path(path, item.key()), "unknown key");
    }
    return true;
  }

  const json* member(const json& node, const std::string& path, const char* key, bool required) {
    auto it = node.find(key);
    if (it == node.end()) {
      if (required) fail(join_path(path, key), "missing");
      return nullptr;
    }
    return &*it;
  }

  std::optional<double> number(const json& node, const std::string& path, bool allow_inf = false) {
    if (node.is_number()) return node.get<double>();
    if (allow_inf && node.is_string()) {
      const std::string s = node.get<std::string>();
      if (s == "inf" || s == "infinity" || s == "ideal") return kInf;
    }
    fail(path, allow_inf ? "expected a number or \"inf\"" : "expected a number");
    return std::nullopt;
  }

  std::optional<std::int64_t> integer(const json& node, const std::string& path) {
    if (node.is_number_integer()) return node.get<std::int64_t>();
    fail(path, "expected an integer");
    return std::nullopt;
  }

  std::optional<std::uint64_t> unsigned_integer(const json& node, const std::string& path) {
    if (node.is_number_unsigned()) return node.get<std::uint64_t>();
    if (node.is_number_integer() && node.get<std::int64_t>() >= 0) return node.get<std::uint64_t>();
    fail(path, "expected a nonnegative 64-bit integer");
    return std::nullopt;
  }

  std::vector<double> numbers(const json& node, const std::string& path, bool allow_inf = false) {
    std::vector<double> out;
    if (!node.is_array()) {
      fail(path, "expected a list");
      return out;
    }
    if (node.empty()) fail(path, "list must not be empty");
    for (std::size_t i = 0; i < node.size(); ++i) {
      if (auto v = number(node[i], index_path(path, i), allow_inf)) out.push_back(*v);
    }
    return out;
  }

  static std::string join_path(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }
  static std::string index_path(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }
};

template <typename T>
void reject_duplicates(Reader& in, const std::vector<T>& values, const std::string& path) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (values[i] == values[j]) {
        in.fail(Reader::index_path(path, i), "duplicate of entry " + std::to_string(j));
        break;
      }
    }
  }
}

void parse_task(Reader& in, const json& node, TaskSection& task) {
  if (!in.object(node, "task", {"d", "spectrum_pre", "spectrum_ft", "seed"})) return;
  if (const json* d = in.member(node, "task", "d", true)) {
    if (auto v = in.integer(*d, "task.d")) {
      if (*v < 1 || *v > 256) {
        in.fail("task.d", "must be between 1 and 256");
      } else {
        task.d = static_cast<int>(*v);
      }
    }
  }
  if (const json* s = in.member(node, "task", "spectrum_pre", true)) task.spectrum_pre = in.numbers(*s, "task.spectrum_pre");
  if (const json* s = in.member(node, "task", "spectrum_ft", true)) task.spectrum_ft = in.numbers(*s, "task.spectrum_ft");
  if (const json* s = in.member(node, "task", "seed", false)) task.seed = in.unsigned_integer(*s, "task.seed");

  for (std::size_t i = 0; i < task.spectrum_pre.size(); ++i) {
    const double v = task.spectrum_pre[i];
    if (!(v > 0.0) || !std::isfinite(v)) in.fail(Reader::index_path("task.spectrum_pre", i), "must be positive and finite");
    if (i > 0 && !(v < task.spectrum_pre[i - 1])) {
      in.fail(Reader::index_path("task.spectrum_pre", i), "pre-training spectrum must be strictly decreasing");
    }
  }
  for (std::size_t i = 0; i < task.spectrum_ft.size(); ++i) {
    const double v = task.spectrum_ft[i];
    if (!(v > 0.0) || !std::isfinite(v)) in.fail(Reader::index_path("task.spectrum_ft", i), "must be positive and finite");
  }
  if (task.d > 0) {
    if (!task.spectrum_pre.empty() && static_cast<int>(task.spectrum_pre.size()) != task.d) {
      in.fail("task.spectrum_pre", "length " + std::to_string(task.spectrum_pre.size()) + " differs from d");
    }
    if (!task.spectrum_ft.empty() && static_cast<int>(task.spectrum_ft.size()) != task.d) {
      in.fail("task.spectrum_ft", "length " + std::to_string(task.spectrum_ft.size()) + " differs from d");
    }
  }
}

void parse_pretrain(Reader& in, const json& node, PretrainSection& pre) {
  if (!in.object(node, "pretrain", {"tau", "step", "horizon", "eps_ckpt"})) return;
  if (const json* t = in.member(node, "pretrain", "tau", true)) pre.tau = in.numbers(*t, "pretrain.tau", true);
  for (std::size_t i = 0; i < pre.tau.size(); ++i) {
    if (!(pre.tau[i] > 0.0)) in.fail(Reader::index_path("pretrain.tau", i), "must be positive");
  }
  reject_duplicates(in, pre.tau, "pretrain.tau");
  if (const json* s = in.member(node, "pretrain", "step", false)) {
    pre.step = in.number(*s, "pretrain.step");
    if (pre.step && !(*pre.step > 0.0)) in.fail("pretrain.step", "must be positive");
  }
  if (const json* h = in.member(node, "pretrain", "horizon", false)) {
    pre.horizon = in.number(*h, "pretrain.horizon");
    if (pre.horizon && !(*pre.horizon > 0.0)) in.fail("pretrain.horizon", "must be positive");
  }
  if (const json* e = in.member(node, "pretrain", "eps_ckpt", false)) {
    if (auto v = in.number(*e, "pretrain.eps_ckpt")) {
      if (!(*v > 0.0)) in.fail("pretrain.eps_ckpt", "must be positive");
      pre.eps_ckpt = *v;
    }
  }
}

void parse_perturb(Reader& in, const json& node, PerturbSection& per) {
  if (!in.object(node, "perturb", {"gamma", "mc_samples", "mc_enabled"})) return;
  if (const json* g = in.member(node, "perturb", "gamma", true)) per.gamma = in.numbers(*g, "perturb.gamma");
  for (std::size_t i = 0; i < per.gamma.size(); ++i) {
    if (!(per.gamma[i] >= 0.0) || !std::isfinite(per.gamma[i])) {
      in.fail(Reader::index_path("perturb.gamma", i), "must be nonnegative and finite");
    }
  }
  reject_duplicates(in, per.gamma, "perturb.gamma");
  if (const json* m = in.member(node, "perturb", "mc_samples", false)) {
    if (auto v = in.integer(*m, "perturb.mc_samples")) {
      if (*v < 2) in.fail("perturb.mc_samples", "must be at least 2");
      per.mc_samples = static_cast<long>(*v);
    }
  }
  if (const json* m = in.member(node, "perturb", "mc_enabled", false)) {
    if (m->is_boolean()) {
      per.mc_enabled = m->get<bool>();
    } else {
      in.fail("perturb.mc_enabled", "expected true or false");
    }
  }
}

void parse_finetune(Reader& in, const json& node, FinetuneSection& ft) {
  if (!in.object(node, "finetune", {"eta", "lambda", "K", "batch", "seeds"})) return;
  if (const json* e = in.member(node, "finetune", "eta", true)) ft.eta = in.numbers(*e, "finetune.eta");
  for (std::size_t i = 0; i < ft.eta.size(); ++i) {
    if (!(ft.eta[i] > 0.0) || !std::isfinite(ft.eta[i])) in.fail(Reader::index_path("finetune.eta", i), "must be positive");
  }
  reject_duplicates(in, ft.eta, "finetune.eta");
  if (const json* l = in.member(node, "finetune", "lambda", true)) ft.lambda = in.numbers(*l, "finetune.lambda");
  for (std::size_t i = 0; i < ft.lambda.size(); ++i) {
    if (!(ft.lambda[i] >= 0.0) || !std::isfinite(ft.lambda[i])) {
      in.fail(Reader::index_path("finetune.lambda", i), "must be nonnegative and finite");
    }
  }
  reject_duplicates(in, ft.lambda, "finetune.lambda");
  if (const json* k = in.member(node, "finetune", "K", true)) {
    if (auto v = in.integer(*k, "finetune.K")) {
      if (*v < 1 || *v > 100000000) {
        in.fail("finetune.K", "must be between 1 and 1e8");
      } else {
        ft.K = static_cast<int>(*v);
      }
    }
  }
  if (const json* b = in.member(node, "finetune", "batch", true)) {
    if (!b->is_array() || b->empty()) {
      in.fail("finetune.batch", "expected a non-empty list");
    } else {
      for (std::size_t i = 0; i < b->size(); ++i) {
        const json& item = (*b)[i];
        const std::string path = Reader::index_path("finetune.batch", i);
        if (item.is_string() && (item == "infinite" || item == "inf")) {
          ft.batch.push_back(BatchSize::infinite());
        } else if (item.is_number_integer() && item.get<std::int64_t>() >= 1 &&
                   item.get<std::int64_t>() <= std::numeric_limits<int>::max()) {
          ft.batch.push_back(BatchSize::of(item.get<int>()));
        } else {
          in.fail(path, "expected a positive integer or \"infinite\"");
        }
      }
      reject_duplicates(in, ft.batch, "finetune.batch");
    }
  }
  if (const json* s = in.member(node, "finetune", "seeds", true)) {
    if (!s->is_array() || s->empty()) {
      in.fail("finetune.seeds", "expected a non-empty list");
    } else {
      for (std::size_t i = 0; i < s->size(); ++i) {
        if (auto v = in.unsigned_integer((*s)[i], Reader::index_path("finetune.seeds", i))) ft.seeds.push_back(*v);
      }
      reject_duplicates(in, ft.seeds, "finetune.seeds");
    }
  }
}

void parse_verify(Reader& in, const json& node, VerifySection& ver) {
  if (!in.object(node, "verify", {"epsilon", "delta_prob", "tolerance"})) return;
  if (const json* e = in.member(node, "verify", "epsilon", false)) {
    if (auto v = in.number(*e, "verify.epsilon")) {
      if (!(*v > 0.0) || !std::isfinite(*v)) in.fail("verify.epsilon", "must be positive");
      ver.epsilon = *v;
    }
  }
  if (const json* e = in.member(node, "verify", "delta_prob", false)) {
    if (auto v = in.number(*e, "verify.delta_prob")) {
      if (!(*v > 0.0 && *v < 1.0)) in.fail("verify.delta_prob", "must lie in (0, 1)");
      ver.delta_prob = *v;
    }
  }
  if (const json* e = in.member(node, "verify", "tolerance", false)) {
    ver.tolerance = in.number(*e, "verify.tolerance");
    if (ver.tolerance && !(*ver.tolerance >= 0.0)) in.fail("verify.tolerance", "must be nonnegative");
  }
}

// Checks that need several sections at once.
void cross_validate(Reader& in, const ExperimentConfig& c) {
  const auto& t = c.task;
  if (t.d <= 0 || static_cast<int>(t.spectrum_pre.size()) != t.d || static_cast<int>(t.spectrum_ft.size()) != t.d) {
    return;
  }
  const double top_pre = t.spectrum_pre.front();
  const double gamma = std::max(top_pre, *std::max_element(t.spectrum_ft.begin(), t.spectrum_ft.end()));
  for (double eta : c.finetune.eta) {
    for (double lambda : c.finetune.lambda) {
      const double load = 4.0 * eta * (lambda + 2.0) * gamma;
      if (!(load < 1.0)) {
        in.fail("finetune", "eta=" + format_double(eta) + " lambda=" + format_double(lambda) +
                                ": learning-rate bound 4 eta (lambda+2) Gamma = " + format_double(load) +
                                " >= 1 (Gamma=" + format_double(gamma) + ")");
      }
    }
  }
  if (c.pretrain.step && !(*c.pretrain.step < 1.0 / (8.0 * top_pre))) {
    in.fail("pretrain.step", "must be below 1/(8 sigma_1) = " + format_double(1.0 / (8.0 * top_pre)));
  }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> diagnostics)
    : Error("invalid config:" + join(diagnostics)), diagnostics_(std::move(diagnostics)) {}

std::uint64_t ExperimentConfig::task_seed() const { return task.seed.value_or(derive_seed(seed, {kTaskSeedTag})); }

std::pair<LinearTask, LinearTask> ExperimentConfig::tasks() const {
  return make_task_pair(Spectrum::Decreasing(task.spectrum_pre), task.spectrum_ft, task.d, task_seed());
}

PretrainConfig ExperimentConfig::pretrain_config(double tau) const {
  PretrainConfig c = default_pretrain_config(Spectrum::Decreasing(task.spectrum_pre), tau);
  if (pretrain.step) c.step = *pretrain.step;
  if (pretrain.horizon) c.horizon = *pretrain.horizon;
  c.eps_ckpt = pretrain.eps_ckpt;
  return c;
}

VerifyOptions ExperimentConfig::verify_options() const {
  VerifyOptions o;
  o.epsilon = verify.epsilon;
  o.delta_prob = verify.delta_prob;
  o.tolerance = verify.tolerance;
  return o;
}

ExperimentConfig parse_config(const nlohmann::json& input) {
  const json* root = &input;
  if (input.is_object() && input.contains("config") && input.contains("tool")) root = &input["config"];

  Reader in;
  ExperimentConfig c;
  if (!in.object(*root, "", {"name", "seed", "task", "pretrain", "perturb", "finetune", "verify", "output_dir"})) {
    throw ConfigError(in.errors);
  }
  const json& doc = *root;
  if (const json* n = in.member(doc, "", "name", true)) {
    if (n->is_string() && !n->get<std::string>().empty()) {
      c.name = n->get<std::string>();
    } else {
      in.fail("name", "expected a non-empty string");
    }
  }
  if (const json* s = in.member(doc, "", "seed", false)) {
    if (auto v = in.unsigned_integer(*s, "seed")) c.seed = *v;
  }
  if (const json* n = in.member(doc, "", "task", true)) parse_task(in, *n, c.task);
  if (const json* n = in.member(doc, "", "pretrain", true)) parse_pretrain(in, *n, c.pretrain);
  if (const json* n = in.member(doc, "", "perturb", true)) parse_perturb(in, *n, c.perturb);
  if (const json* n = in.member(doc, "", "finetune", true)) parse_finetune(in, *n, c.finetune);
  if (const json* n = in.member(doc, "", "verify", false)) parse_verify(in, *n, c.verify);
  if (const json* o = in.member(doc, "", "output_dir", false)) {
    if (o->is_string()) {
      c.output_dir = o->get<std::string>();
    } else {
      in.fail("output_dir", "expected a string");
    }
  }
  cross_validate(in, c);
  if (!in.errors.empty()) throw ConfigError(in.errors);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) throw ConfigError({path.string() + ": cannot open"});
  json doc;
  try {
    doc = json::parse(file);
  } catch (const json::parse_error& e) {
    throw ConfigError({path.string() + ": " + e.what()});
  }
  return parse_config(doc);
}

nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  using ojson = nlohmann::ordered_json;
  auto num = [](double v) -> ojson {
    if (std::isinf(v)) return "inf";
    return v;
  };
  ojson out;
  out["name"] = c.name;
  out["seed"] = c.seed;

  ojson task;
  task["d"] = c.task.d;
  task["spectrum_pre"] = c.task.spectrum_pre;
  task["spectrum_ft"] = c.task.spectrum_ft;
  task["seed"] = c.task_seed();
  out["task"] = task;

  ojson pre;
  ojson taus = ojson::array();
  for (double t : c.pretrain.tau) taus.push_back(num(t));
  pre["tau"] = taus;
  if (c.pretrain.step) pre["step"] = *c.pretrain.step;
  if (c.pretrain.horizon) pre["horizon"] = *c.pretrain.horizon;
  pre["eps_ckpt"] = c.pretrain.eps_ckpt;
  out["pretrain"] = pre;

  ojson per;
  per["gamma"] = c.perturb.gamma;
  per["mc_samples"] = c.perturb.mc_samples;
  per["mc_enabled"] = c.perturb.mc_enabled;
  out["perturb"] = per;

  ojson ft;
  ft["eta"] = c.finetune.eta;
  ft["lambda"] = c.finetune.lambda;
  ft["K"] = c.finetune.K;
  ojson batches = ojson::array();
  for (const BatchSize& b : c.finetune.batch) {
    if (b.is_infinite()) {
      batches.push_back("infinite");
    } else {
      batches.push_back(b.size());
    }
  }
  ft["batch"] = batches;
  ft["seeds"] = c.finetune.seeds;
  out["finetune"] = ft;

  ojson ver;
  ver["epsilon"] = c.verify.epsilon;
  ver["delta_prob"] = c.verify.delta_prob;
  if (c.verify.tolerance) ver["tolerance"] = *c.verify.tolerance;
  out["verify"] = ver;

  out["output_dir"] = c.output_dir;
  return out;
}

}  // namespace overtrain::harness
