#include "scalelab/config.hpp"

#include <fstream>

namespace scalelab {

using nlohmann::json;

void apply_profile(const std::string& profile, TrainConfig& config, GeneratorOptions& data) {
  if (profile == "desk") {
    config.model = ModelConfig::desk();
    data.count = 1280;
  } else if (profile == "paper") {
    config.model = ModelConfig::paper();
    data.count = 1280;
  } else {
    throw Error("unknown profile '" + profile + "' (expected paper or desk)");
  }
  data.grid.n = config.model.n;
  data.grid.side = config.model.side;
}

namespace {

std::string transport_name(Transport t) { return t == Transport::Socket ? "socket" : "inmemory"; }

Transport parse_transport(const std::string& s) {
  if (s == "inmemory") return Transport::InMemory;
  if (s == "socket") return Transport::Socket;
  throw Error("unknown transport '" + s + "' (expected inmemory or socket)");
}

json model_json(const ModelConfig& m) {
  json enc = json::array();
  for (const auto& c : m.encoder) enc.push_back({{"kernel", c.kernel}, {"filters", c.filters}});
  return {{"n", m.n}, {"K", m.K}, {"side", m.side}, {"latent", m.latent}, {"encoder", enc}};
}

// Reads every key of `j` through `handlers`; anything unhandled is an error.
template <typename Handlers>
void dispatch(const json& j, const char* what, Handlers&& handlers) {
  if (!j.is_object()) throw Error(std::string(what) + " config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    try {
      if (!handlers(it.key(), it.value())) throw Error("unknown " + std::string(what) + " key '" + it.key() + "'");
    } catch (const json::exception& e) {
      throw Error("bad value for " + std::string(what) + " key '" + it.key() + "': " + e.what());
    }
  }
}

void merge_model(const json& j, ModelConfig& m) {
  dispatch(j, "model", [&](const std::string& k, const json& v) {
    if (k == "n") v.get_to(m.n);
    else if (k == "K") v.get_to(m.K);
    else if (k == "side") v.get_to(m.side);
    else if (k == "latent") v.get_to(m.latent);
    else if (k == "encoder") {
      m.encoder.clear();
      for (const auto& c : v) m.encoder.push_back({c.at("kernel").get<std::size_t>(), c.at("filters").get<std::size_t>()});
    } else return false;
    return true;
  });
}

}  // namespace

json to_json(const TrainConfig& c) {
  return {{"mode", to_string(c.scaling)},
          {"schedule", to_string(c.schedule)},
          {"workers", c.workers},
          {"batch", c.base_batch},
          {"lr", c.base_lr},
          {"seed", c.seed},
          {"target_loss", c.target_loss},
          {"max_epochs", c.max_epochs},
          {"warmup_epochs", c.warmup_epochs},
          {"optimizer", to_string(c.optimizer)},
          {"transport", transport_name(c.transport)},
          {"threads", c.max_threads},
          {"model", model_json(c.model)}};
}

json to_json(const GeneratorOptions& o) {
  return {{"count", o.count},     {"seed", o.seed},   {"n", o.grid.n},
          {"side", o.grid.side},  {"k_min", o.k_min}, {"k_max", o.k_max},
          {"noise_sd", o.noise_sd}};
}

json to_json(const ExperimentPlan& p) {
  json variants = json::array();
  for (const auto& v : p.variants) variants.push_back({{"mode", to_string(v.scaling)}, {"schedule", to_string(v.schedule)}});
  return {{"base", to_json(p.base)},
          {"variants", variants},
          {"workers", p.workers},
          {"repetitions", p.repetitions},
          {"output_dir", p.output_dir},
          {"dataset", to_json(p.dataset)},
          {"validation_size", p.validation_size},
          {"parallel_runs", p.parallel_runs}};
}

void merge_json(const json& j, TrainConfig& c) {
  dispatch(j, "train", [&](const std::string& k, const json& v) {
    if (k == "mode") c.scaling = parse_scaling_mode(v.get<std::string>());
    else if (k == "schedule") c.schedule = parse_schedule_mode(v.get<std::string>());
    else if (k == "workers") v.get_to(c.workers);
    else if (k == "batch") v.get_to(c.base_batch);
    else if (k == "lr") v.get_to(c.base_lr);
    else if (k == "seed") v.get_to(c.seed);
    else if (k == "target_loss") v.get_to(c.target_loss);
    else if (k == "max_epochs") v.get_to(c.max_epochs);
    else if (k == "warmup_epochs") v.get_to(c.warmup_epochs);
    else if (k == "optimizer") c.optimizer = parse_optimizer(v.get<std::string>());
    else if (k == "transport") c.transport = parse_transport(v.get<std::string>());
    else if (k == "threads") v.get_to(c.max_threads);
    else if (k == "model") merge_model(v, c.model);
    else return false;
    return true;
  });
}

void merge_json(const json& j, GeneratorOptions& o) {
  dispatch(j, "dataset", [&](const std::string& k, const json& v) {
    if (k == "count") v.get_to(o.count);
    else if (k == "seed") v.get_to(o.seed);
    else if (k == "n") v.get_to(o.grid.n);
    else if (k == "side") v.get_to(o.grid.side);
    else if (k == "k_min") v.get_to(o.k_min);
    else if (k == "k_max") v.get_to(o.k_max);
    else if (k == "noise_sd") v.get_to(o.noise_sd);
    else return false;
    return true;
  });
}

void merge_json(const json& j, ExperimentPlan& p) {
  dispatch(j, "plan", [&](const std::string& k, const json& v) {
    if (k == "base") merge_json(v, p.base);
    else if (k == "variants") {
      p.variants.clear();
      for (const auto& e : v)
        p.variants.push_back({parse_scaling_mode(e.at("mode").get<std::string>()),
                              parse_schedule_mode(e.at("schedule").get<std::string>())});
    } else if (k == "workers") v.get_to(p.workers);
    else if (k == "repetitions") v.get_to(p.repetitions);
    else if (k == "output_dir") v.get_to(p.output_dir);
    else if (k == "dataset") merge_json(v, p.dataset);
    else if (k == "validation_size") v.get_to(p.validation_size);
    else if (k == "parallel_runs") v.get_to(p.parallel_runs);
    else return false;
    return true;
  });
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path);
  try {
    return json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw Error(path + ": " + e.what());
  }
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw Error("failed writing " + path);
}

}  // namespace scalelab
