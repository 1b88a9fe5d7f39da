#include "mtk/config.hpp"

#include <algorithm>
#include <set>

#include "mtk/error.hpp"

namespace mtk {

using nlohmann::json;

std::vector<TaskSpec> default_tasks(int classes) {
  return {
      {"semseg", classes + 1, LossKind::cross_entropy, MetricKind::miou, true, {}},
      {"depth", 1, LossKind::l1, MetricKind::rmse, false, {}},
      {"normal", 3, LossKind::l1, MetricKind::mean_angular_error, false, {}},
      {"boundary", 2, LossKind::cross_entropy, MetricKind::boundary_f1, true, {0.05, 0.95}},
  };
}

nn::MixerConfig ModelConfig::mixer_config() const {
  nn::MixerConfig m;
  m.kind = mixer;
  m.state = state;
  m.tie_directions = tie_directions;
  m.active = directions;
  m.window = window;
  m.heads = heads;
  return m;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw SchemaError("model config: " + m); };
  if (channels < 1) fail("channels must be >= 1");
  if (alpha < 1) fail("alpha must be >= 1");
  if (state < 1) fail("state must be >= 1");
  if (stages < 1 || stages > 3) fail("stages must be 1, 2 or 3");
  if (window < 1 || heads < 1) fail("window and heads must be >= 1");
  if ((alpha * channels) % heads != 0) fail("alpha*channels must be divisible by heads");
  if (directions.empty()) fail("at least one scan direction is required");
  std::set<scan2d::Direction> seen(directions.begin(), directions.end());
  if (seen.size() != directions.size()) fail("duplicate scan direction");
  if (tasks.empty()) fail("at least one task is required");
  std::set<std::string> names;
  for (const auto& t : tasks) {
    if (!names.insert(t.name).second) fail("duplicate task " + t.name);
    if (t.out_dim < 1) fail("task " + t.name + ": out_dim must be >= 1");
    const bool ce = t.loss == LossKind::cross_entropy;
    if (ce && t.out_dim < 2) fail("task " + t.name + ": cross-entropy needs >= 2 classes");
    if (!t.class_weights.empty() &&
        (!ce || static_cast<std::int64_t>(t.class_weights.size()) != t.out_dim)) {
      fail("task " + t.name + ": class_weights need cross-entropy and one weight per class");
    }
    switch (t.metric) {
      case MetricKind::miou:
        if (!ce) fail("task " + t.name + ": miou needs a cross-entropy task");
        break;
      case MetricKind::boundary_f1:
        if (!ce || t.out_dim != 2) fail("task " + t.name + ": boundary_f1 needs 2-class CE");
        break;
      case MetricKind::mean_angular_error:
        if (t.out_dim != 3) fail("task " + t.name + ": mean_angular_error needs out_dim 3");
        break;
      case MetricKind::rmse:
        if (ce) fail("task " + t.name + ": rmse needs a regression loss");
        break;
    }
  }
}

const char* name(CtmKind k) {
  switch (k) {
    case CtmKind::none: return "none";
    case CtmKind::fctm: return "fctm";
    case CtmKind::sctm: return "sctm";
  }
  return "?";
}
const char* name(HeadKind k) { return k == HeadKind::dense ? "dense" : "lite"; }
const char* name(LossKind k) { return k == LossKind::l1 ? "l1" : "cross_entropy"; }
const char* name(MetricKind k) {
  switch (k) {
    case MetricKind::miou: return "miou";
    case MetricKind::rmse: return "rmse";
    case MetricKind::mean_angular_error: return "mean_angular_error";
    case MetricKind::boundary_f1: return "boundary_f1";
  }
  return "?";
}

namespace {

const char* name(nn::MixerKind k) { return k == nn::MixerKind::ssm ? "ssm" : "attention"; }

template <class E, std::size_t K>
E parse_enum(const json& j, const char* field, const std::array<E, K>& values) {
  if (!j.is_string()) throw SchemaError(std::string(field) + " must be a string");
  const auto s = j.get<std::string>();
  for (E v : values)
    if (s == name(v)) return v;
  throw SchemaError(std::string("unknown ") + field + " '" + s + "'");
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw SchemaError(std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw SchemaError(std::string(what) + ": unknown key '" + key + "'");
    }
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    const json& v = j.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw SchemaError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw SchemaError("");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) throw SchemaError("");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw SchemaError("");
    }
    out = v.get<T>();
  } catch (const std::exception&) {
    throw SchemaError(std::string("bad value for '") + key + "'");
  }
}

TaskSpec task_from_json(const json& j) {
  check_keys(j, {"name", "out_dim", "loss", "metric", "higher_better", "class_weights"}, "task");
  TaskSpec t;
  if (!j.contains("name") || !j["name"].is_string()) throw SchemaError("task needs a name");
  t.name = j["name"].get<std::string>();
  read(j, "out_dim", t.out_dim);
  if (j.contains("loss"))
    t.loss = parse_enum(j["loss"], "loss",
                        std::array{LossKind::cross_entropy, LossKind::l1});
  if (j.contains("metric"))
    t.metric = parse_enum(j["metric"], "metric",
                          std::array{MetricKind::miou, MetricKind::rmse,
                                     MetricKind::mean_angular_error, MetricKind::boundary_f1});
  read(j, "higher_better", t.higher_better);
  read(j, "class_weights", t.class_weights);
  return t;
}

}  // namespace

json to_json(const ModelConfig& c) {
  json tasks = json::array();
  for (const auto& t : c.tasks) {
    tasks.push_back({{"name", t.name},
                     {"out_dim", t.out_dim},
                     {"loss", name(t.loss)},
                     {"metric", name(t.metric)},
                     {"higher_better", t.higher_better},
                     {"class_weights", t.class_weights}});
  }
  json dirs = json::array();
  for (auto d : c.directions) dirs.push_back(scan2d::name(d));
  return {{"channels", c.channels},
          {"alpha", c.alpha},
          {"state", c.state},
          {"stages", c.stages},
          {"ctm", name(c.ctm)},
          {"head", name(c.head)},
          {"mixer", name(c.mixer)},
          {"window", c.window},
          {"heads", c.heads},
          {"tie_directions", c.tie_directions},
          {"directions", dirs},
          {"tasks", tasks},
          {"seed", c.seed}};
}

json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch", c.batch},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"eval_interval", c.eval_interval},
          {"image", c.image},
          {"classes", c.classes},
          {"train_samples", c.train_samples},
          {"eval_samples", c.eval_samples},
          {"data_seed", c.data_seed},
          {"seed", c.seed}};
}

json to_json(const RunConfig& c) { return {{"model", to_json(c.model)}, {"train", to_json(c.train)}}; }

ModelConfig model_config_from_json(const json& j) {
  check_keys(j,
             {"channels", "alpha", "state", "stages", "ctm", "head", "mixer", "window", "heads",
              "tie_directions", "directions", "tasks", "seed"},
             "model");
  ModelConfig c;
  read(j, "channels", c.channels);
  read(j, "alpha", c.alpha);
  read(j, "state", c.state);
  read(j, "stages", c.stages);
  read(j, "window", c.window);
  read(j, "heads", c.heads);
  read(j, "tie_directions", c.tie_directions);
  read(j, "seed", c.seed);
  if (j.contains("ctm"))
    c.ctm = parse_enum(j["ctm"], "ctm", std::array{CtmKind::none, CtmKind::fctm, CtmKind::sctm});
  if (j.contains("head"))
    c.head = parse_enum(j["head"], "head", std::array{HeadKind::dense, HeadKind::lite});
  if (j.contains("mixer"))
    c.mixer = parse_enum(j["mixer"], "mixer",
                         std::array{nn::MixerKind::ssm, nn::MixerKind::attention});
  if (j.contains("directions")) {
    if (!j["directions"].is_array()) throw SchemaError("directions must be an array");
    c.directions.clear();
    for (const auto& d : j["directions"]) {
      c.directions.push_back(parse_enum(d, "direction",
                                        std::array{scan2d::Direction::D1, scan2d::Direction::D2,
                                                   scan2d::Direction::D3, scan2d::Direction::D4}));
    }
  }
  if (j.contains("tasks")) {
    if (!j["tasks"].is_array()) throw SchemaError("tasks must be an array");
    c.tasks.clear();
    for (const auto& t : j["tasks"]) c.tasks.push_back(task_from_json(t));
  }
  c.validate();
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  check_keys(j,
             {"steps", "batch", "lr", "weight_decay", "eval_interval", "image", "classes",
              "train_samples", "eval_samples", "data_seed", "seed"},
             "train");
  TrainConfig c;
  read(j, "steps", c.steps);
  read(j, "batch", c.batch);
  read(j, "lr", c.lr);
  read(j, "weight_decay", c.weight_decay);
  read(j, "eval_interval", c.eval_interval);
  read(j, "image", c.image);
  read(j, "classes", c.classes);
  read(j, "train_samples", c.train_samples);
  read(j, "eval_samples", c.eval_samples);
  read(j, "data_seed", c.data_seed);
  read(j, "seed", c.seed);
  if (c.steps < 1) throw SchemaError("train: steps must be >= 1");
  if (c.batch < 1) throw SchemaError("train: batch must be >= 1");
  if (!(c.lr > 0)) throw SchemaError("train: lr must be positive");
  if (c.weight_decay < 0) throw SchemaError("train: weight_decay must be >= 0");
  if (c.eval_interval < 1) throw SchemaError("train: eval_interval must be >= 1");
  if (c.image < 32 || c.image % 32 != 0) throw SchemaError("train: image must be a multiple of 32");
  if (c.classes < 1) throw SchemaError("train: classes must be >= 1");
  if (c.train_samples < 1 || c.eval_samples < 1) throw SchemaError("train: sample counts must be >= 1");
  return c;
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, {"model", "train"}, "config");
  RunConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j["model"]);
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  return c;
}

}  // namespace mtk
