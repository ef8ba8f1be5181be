#include "tarvis/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace tarvis {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'T', 'V', 'C', 'K', 'P', 'T', '0', '1'};

json class_table_to_json(const ClassTable& classes) {
  json out = json::array();
  for (const auto& c : classes)
    out.push_back({{"id", c.id}, {"is_thing", c.is_thing}, {"name", c.name}});
  return out;
}

ClassTable class_table_from_json(const json& j) {
  ClassTable out;
  for (const auto& c : j) out.push_back({c.at("id").get<int>(), c.at("is_thing").get<bool>(),
                                         c.value("name", std::string())});
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const TarvisModel& model, const RunConfig& cfg,
                     Index step, const std::string& rng_state, const AdamW* optimizer) {
  json meta;
  meta["schema_version"] = 1;
  meta["step"] = step;
  meta["rng"] = rng_state;
  meta["config"] = config_snapshot(cfg);
  json datasets = json::array();
  for (const auto& [name, classes] : model.registered_datasets())
    datasets.push_back({{"name", name}, {"classes", class_table_to_json(classes)}});
  meta["datasets"] = datasets;
  if (optimizer) meta["adam_steps"] = optimizer->steps();

  struct Blob {
    std::string name;
    const Tensor* t;
  };
  std::vector<Blob> blobs;
  for (const auto& p : model.params().params()) blobs.push_back({p->name, &p->value});
  if (optimizer) {
    auto& m = const_cast<AdamW*>(optimizer)->moment1();
    auto& v = const_cast<AdamW*>(optimizer)->moment2();
    const auto& ps = model.params().params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      blobs.push_back({"adam.m." + ps[i]->name, &m[i]});
      blobs.push_back({"adam.v." + ps[i]->name, &v[i]});
    }
  }

  json arrays = json::array();
  std::uint64_t offset = 0;
  for (const auto& b : blobs) {
    json shape = json::array();
    for (Index d : b.t->shape()) shape.push_back(d);
    arrays.push_back({{"name", b.name}, {"dtype", "f64"}, {"shape", shape}, {"offset", offset}});
    offset += (std::uint64_t)b.t->size() * sizeof(double);
  }
  meta["arrays"] = arrays;

  const std::string meta_str = meta.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, 8);
  const std::uint64_t len = meta_str.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(meta_str.data(), (std::streamsize)meta_str.size());
  for (const auto& b : blobs)
    out.write(reinterpret_cast<const char*>(b.t->data()), (std::streamsize)(b.t->size() * sizeof(double)));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("not a tarvis checkpoint: " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  std::string meta_str((std::size_t)len, '\0');
  in.read(meta_str.data(), (std::streamsize)len);
  if (!in) throw std::runtime_error("truncated checkpoint metadata: " + path);
  json meta = json::parse(meta_str);

  LoadedCheckpoint ck;
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : meta.at("config").items()) kv[k] = v.get<std::string>();
  ck.config = config_from_snapshot(kv);
  ck.step = meta.at("step").get<Index>();
  ck.adam_steps = meta.value("adam_steps", (Index)0);
  ck.rng_state = meta.at("rng").get<std::string>();
  for (const auto& d : meta.at("datasets"))
    ck.datasets.emplace_back(d.at("name").get<std::string>(),
                             class_table_from_json(d.at("classes")));
  for (const auto& a : meta.at("arrays")) {
    Shape shape;
    for (const auto& d : a.at("shape")) shape.push_back(d.get<Index>());
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), (std::streamsize)(t.size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint payload: " + path);
    ck.arrays.emplace(a.at("name").get<std::string>(), std::move(t));
  }
  return ck;
}

void LoadedCheckpoint::restore_model(TarvisModel& model) const {
  model.init(config.model);
  for (const auto& [name, classes] : datasets) model.register_dataset(name, classes);
  for (const auto& p : model.params().params()) {
    auto it = arrays.find(p->name);
    if (it == arrays.end()) throw std::runtime_error("checkpoint missing parameter: " + p->name);
    if (!(it->second.shape() == p->value.shape()))
      throw std::runtime_error("checkpoint shape mismatch for: " + p->name);
    p->value = it->second;
  }
}

bool LoadedCheckpoint::restore_optimizer(AdamW& opt, const TarvisModel& model) const {
  opt.set_steps(adam_steps);
  const auto& ps = model.params().params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto m = arrays.find("adam.m." + ps[i]->name);
    auto v = arrays.find("adam.v." + ps[i]->name);
    if (m == arrays.end() || v == arrays.end()) return false;
    opt.moment1()[i] = m->second;
    opt.moment2()[i] = v->second;
  }
  return true;
}

}  // namespace tarvis
