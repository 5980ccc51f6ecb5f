/*
 * Copyright 2026 The osscl Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "osscl/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <string>

#include "osscl/error.hpp"

namespace osscl {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'O', 'S', 'S', 'C', 'L', 'C', 'K', 'P'};

std::vector<nn::NamedTensor> snapshot(const std::vector<nn::NamedTensor>& src) {
  std::vector<nn::NamedTensor> out;
  out.reserve(src.size());
  for (const auto& [name, t] : src) out.emplace_back(name, t.detach());
  return out;
}

void copy_into(const std::vector<nn::NamedTensor>& dst, const std::vector<nn::NamedTensor>& src,
               const char* what) {
  if (dst.size() != src.size()) {
    throw ShapeError(std::string("checkpoint ") + what + " count " + std::to_string(src.size()) +
                     " does not match model count " + std::to_string(dst.size()));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const auto& [dname, dt] = dst[i];
    const auto& [sname, st] = src[i];
    if (dname != sname || dt.shape() != st.shape()) {
      throw ShapeError(std::string("checkpoint ") + what + " '" + sname + "' " +
                       nn::shape_string(st.shape()) + " does not match model '" + dname + "' " +
                       nn::shape_string(dt.shape()));
    }
    nn::Tensor target = dt;
    std::copy(st.values().begin(), st.values().end(), target.values().begin());
  }
}

}  // namespace

Checkpoint make_checkpoint(const OsSclModel& model, const EmaState& ema, const RunConfig& cfg,
                           const std::map<MachineKey, int>& class_map, std::size_t steps) {
  Checkpoint c;
  c.config = cfg;
  c.config.model = model.config();
  c.class_map = class_map;
  c.raw_params = snapshot(model.named_parameters());
  c.raw_buffers = snapshot(model.named_buffers());
  c.ema_params = snapshot(ema.params);
  c.ema_buffers = snapshot(ema.buffers);
  c.steps = steps;
  c.ema_updates = ema.updates;
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json header;
  header["config"] = to_json(ckpt.config);
  header["num_classes"] = ckpt.config.model.num_classes;
  header["init_seed"] = ckpt.config.model.init_seed;
  // Duplicated at top level so the loss scaling convention is visible without
  // parsing the config.
  header["supcon_reduction"] = to_string(ckpt.config.contrastive.reduction);
  header["steps"] = ckpt.steps;
  header["ema_updates"] = ckpt.ema_updates;
  json classes = json::array();
  for (const auto& [key, index] : ckpt.class_map) {
    classes.push_back({{"machine_type", key.machine_type},
                       {"machine_id", key.machine_id},
                       {"index", index}});
  }
  header["class_map"] = classes;

  json table = json::array();
  std::vector<const nn::Tensor*> order;
  std::size_t offset = 0;
  auto add = [&](const std::vector<nn::NamedTensor>& set, const char* set_name) {
    for (const auto& [name, t] : set) {
      table.push_back({{"name", name}, {"set", set_name}, {"shape", t.shape()}, {"offset", offset}});
      offset += t.numel();
      order.push_back(&t);
    }
  };
  add(ckpt.raw_params, "raw_param");
  add(ckpt.raw_buffers, "raw_buffer");
  add(ckpt.ema_params, "ema_param");
  add(ckpt.ema_buffers, "ema_buffer");
  header["tensors"] = table;

  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t length = text.size();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const nn::Tensor* t : order) {
    const auto v = t->values();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("checkpoint not found: " + path.string());
  char magic[sizeof(kMagic)];
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError(path.string() + " is not an osscl checkpoint");
  }
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw IoError("truncated checkpoint header in " + path.string());

  Checkpoint c;
  try {
    const json header = json::parse(text);
    c.config = run_config_from_json(header.at("config"));
    c.config.model.num_classes = header.at("num_classes").get<std::size_t>();
    c.config.model.init_seed = header.at("init_seed").get<std::uint64_t>();
    c.steps = header.at("steps").get<std::size_t>();
    c.ema_updates = header.at("ema_updates").get<std::size_t>();
    for (const auto& e : header.at("class_map")) {
      c.class_map[{e.at("machine_type").get<std::string>(), e.at("machine_id").get<int>()}] =
          e.at("index").get<int>();
    }
    for (const auto& e : header.at("tensors")) {
      nn::Tensor t(e.at("shape").get<nn::Shape>());
      const std::string set = e.at("set").get<std::string>();
      auto entry = nn::NamedTensor(e.at("name").get<std::string>(), t);
      if (set == "raw_param") c.raw_params.push_back(entry);
      else if (set == "raw_buffer") c.raw_buffers.push_back(entry);
      else if (set == "ema_param") c.ema_params.push_back(entry);
      else if (set == "ema_buffer") c.ema_buffers.push_back(entry);
      else throw IoError("unknown tensor set '" + set + "' in checkpoint");
    }
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  for (auto* set : {&c.raw_params, &c.raw_buffers, &c.ema_params, &c.ema_buffers}) {
    for (auto& [name, t] : *set) {
      auto v = t.values();
      in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
  }
  if (!in) throw IoError("truncated checkpoint payload in " + path.string());
  if (c.class_map.size() != c.config.model.num_classes) {
    throw IoError("checkpoint class map size disagrees with num_classes");
  }
  return c;
}

void load_weights(nn::Module& module, const std::vector<nn::NamedTensor>& params,
                  const std::vector<nn::NamedTensor>& buffers) {
  copy_into(module.named_parameters(), params, "parameter");
  copy_into(module.named_buffers(), buffers, "buffer");
}

std::unique_ptr<OsSclModel> instantiate(const Checkpoint& ckpt, WeightSet weights) {
  auto model = std::make_unique<OsSclModel>(ckpt.config.model);
  if (weights == WeightSet::ema) {
    load_weights(*model, ckpt.ema_params, ckpt.ema_buffers);
  } else {
    load_weights(*model, ckpt.raw_params, ckpt.raw_buffers);
  }
  model->set_training(false);
  return model;
}

}  // namespace osscl
