#include "popusense/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "popusense/error.hpp"

namespace popusense {

namespace {

using json = nlohmann::json;

[[noreturn]] void config_error(const std::string& msg) { throw Error(Errc::ConfigError, msg); }

class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) config_error("'" + path_ + "' must be an object");
  }

  void expect_only(std::initializer_list<const char*> keys) const {
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [key, _] : obj_.items())
      if (!allowed.count(key)) config_error("unknown key '" + qualify(key) + "'");
  }

  template <class T>
  void read(const char* key, T& out) const {
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw std::invalid_argument("bool");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw std::invalid_argument("int");
        if constexpr (std::is_unsigned_v<T>)
          if (it->is_number_integer() && !it->is_number_unsigned()) throw std::invalid_argument("unsigned");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw std::invalid_argument("number");
      } else {
        if (!it->is_string()) throw std::invalid_argument("string");
      }
      out = it->template get<T>();
    } catch (const std::exception&) {
      config_error("key '" + qualify(key) + "' has the wrong type");
    }
  }

  std::optional<Section> child(const char* key) const {
    const auto it = obj_.find(key);
    if (it == obj_.end()) return std::nullopt;
    return Section(*it, qualify(key));
  }

  std::string qualify(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& obj_;
  std::string path_;
};

template <class F>
void guarded(const std::string& key, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    if (e.code() == Errc::ConfigError) throw;
    config_error("key '" + key + "': " + e.what());
  }
}

json to_json(const RunConfig& cfg) {
  const auto& d = cfg.dataset;
  const auto& t = cfg.train;
  json j;
  j["dataset"] = {
      {"n_train_normal", d.n_train_normal},
      {"n_val_normal", d.n_val_normal},
      {"n_test_normal", d.n_test_normal},
      {"n_test_contrast", d.n_test_contrast},
      {"n_test_texture", d.n_test_texture},
      {"image_size", d.image_size},
      {"master_seed", d.master_seed},
      {"contrast",
       {{"radius_min", d.contrast.radius_min},
        {"radius_max", d.contrast.radius_max},
        {"delta_min", d.contrast.delta_min},
        {"delta_max", d.contrast.delta_max}}},
      {"texture",
       {{"radius_min", d.texture.radius_min},
        {"radius_max", d.texture.radius_max},
        {"noise_sigma", d.texture.noise_sigma},
        {"grain", d.texture.grain}}},
  };
  j["model"] = {{"latent_channels", t.latent_channels}};
  j["train"] = {
      {"configuration", std::string(train::configuration_name(t.configuration))},
      {"epochs", t.epochs},
      {"batch_size", t.batch_size},
      {"learning_rate", t.learning_rate},
      {"momentum", t.momentum},
      {"loss", std::string(train::loss_name(t.loss))},
      {"seed", t.seed},
      {"freeze_output_projection", t.freeze_output_projection},
  };
  if (t.popusense)
    j["popusense"] = {{"k", t.popusense->k}, {"layers", t.popusense->layers},
                      {"bank_capacity", t.popusense->bank_capacity}};
  j["eval"] = {{"smoothing_sigma", cfg.eval.smoothing_sigma}, {"top_q", cfg.eval.top_q}};
  return j;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    config_error(std::string("malformed JSON: ") + e.what());
  }
  const Section top(root, "");
  top.expect_only({"dataset", "model", "train", "popusense", "eval"});

  RunConfig cfg;
  if (auto d = top.child("dataset")) {
    d->expect_only({"n_train_normal", "n_val_normal", "n_test_normal", "n_test_contrast", "n_test_texture",
                    "image_size", "master_seed", "contrast", "texture"});
    auto& ds = cfg.dataset;
    d->read("n_train_normal", ds.n_train_normal);
    d->read("n_val_normal", ds.n_val_normal);
    d->read("n_test_normal", ds.n_test_normal);
    d->read("n_test_contrast", ds.n_test_contrast);
    d->read("n_test_texture", ds.n_test_texture);
    d->read("image_size", ds.image_size);
    d->read("master_seed", ds.master_seed);
    if (auto c = d->child("contrast")) {
      c->expect_only({"radius_min", "radius_max", "delta_min", "delta_max"});
      c->read("radius_min", ds.contrast.radius_min);
      c->read("radius_max", ds.contrast.radius_max);
      c->read("delta_min", ds.contrast.delta_min);
      c->read("delta_max", ds.contrast.delta_max);
    }
    if (auto t = d->child("texture")) {
      t->expect_only({"radius_min", "radius_max", "noise_sigma", "grain"});
      t->read("radius_min", ds.texture.radius_min);
      t->read("radius_max", ds.texture.radius_max);
      t->read("noise_sigma", ds.texture.noise_sigma);
      t->read("grain", ds.texture.grain);
    }
    for (const auto& [key, v] : {std::pair{"n_train_normal", ds.n_train_normal}, {"n_val_normal", ds.n_val_normal},
                                 {"n_test_normal", ds.n_test_normal}, {"n_test_contrast", ds.n_test_contrast},
                                 {"n_test_texture", ds.n_test_texture}})
      if (v < 0) config_error("key 'dataset." + std::string(key) + "' must be >= 0");
    if (ds.image_size < 32 || ds.image_size % 8 != 0)
      config_error("key 'dataset.image_size' must be a multiple of 8 and >= 32");
  }

  if (auto m = top.child("model")) {
    m->expect_only({"latent_channels"});
    m->read("latent_channels", cfg.train.latent_channels);
  }

  auto& tc = cfg.train;
  if (auto t = top.child("train")) {
    t->expect_only({"configuration", "epochs", "batch_size", "learning_rate", "momentum", "loss", "seed",
                    "freeze_output_projection"});
    std::string name = std::string(train::configuration_name(tc.configuration));
    t->read("configuration", name);
    guarded("train.configuration", [&] { tc.configuration = train::parse_configuration(name); });
    t->read("epochs", tc.epochs);
    t->read("batch_size", tc.batch_size);
    t->read("learning_rate", tc.learning_rate);
    t->read("momentum", tc.momentum);
    std::string loss = std::string(train::loss_name(tc.loss));
    t->read("loss", loss);
    guarded("train.loss", [&] { tc.loss = train::parse_loss(loss); });
    t->read("seed", tc.seed);
    t->read("freeze_output_projection", tc.freeze_output_projection);
  }

  const auto p = top.child("popusense");
  if (p) p->expect_only({"k", "layers", "bank_capacity"});
  if (tc.configuration != train::Configuration::pdccore) {
    const auto variant = tc.configuration == train::Configuration::narrow_popusense ? context::Variant::narrow
                                                                                     : context::Variant::wide;
    auto pc = context::PopuSenseConfig::defaults(variant);
    if (p) {
      p->read("k", pc.k);
      p->read("layers", pc.layers);
      p->read("bank_capacity", pc.bank_capacity);
    }
    tc.popusense = pc;
  }

  if (auto e = top.child("eval")) {
    e->expect_only({"smoothing_sigma", "top_q"});
    e->read("smoothing_sigma", cfg.eval.smoothing_sigma);
    e->read("top_q", cfg.eval.top_q);
  }
  if (!(cfg.eval.smoothing_sigma >= 0.0)) config_error("key 'eval.smoothing_sigma' must be >= 0");
  if (!(cfg.eval.top_q > 0.0 && cfg.eval.top_q <= 1.0)) config_error("key 'eval.top_q' must lie in (0, 1]");

  guarded("train", [&] { tc.validate(); });
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string canonical_json(const RunConfig& cfg) { return to_json(cfg).dump(); }

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const RunConfig& cfg) { return fnv1a_hex(canonical_json(cfg)); }

std::optional<std::uint64_t> apply_seed_override(RunConfig& cfg) {
  const char* raw = std::getenv("POPUSENSE_SEED_OVERRIDE");
  if (!raw || !*raw) return std::nullopt;
  try {
    std::size_t used = 0;
    const std::string s(raw);
    if (s.front() == '-') throw std::invalid_argument("negative");
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    cfg.train.seed = v;
    return v;
  } catch (const std::exception&) {
    config_error(std::string("POPUSENSE_SEED_OVERRIDE must be an unsigned integer, got '") + raw + "'");
  }
}

std::string default_config_json() {
  RunConfig cfg;
  return to_json(cfg).dump(2) + "\n";
}

}  // namespace popusense
