#pragma once

// Checkpoint <-> model tensors. A parameter "x" is stored as "x", "x.adam_m" and
// "x.adam_v"; its Adam step count goes to metadata "adam_steps"."x". Buffers
// (running statistics) are stored under their own names.

#include <string>

#include "mrreparam/io.hpp"
#include "mrreparam/model/blocks.hpp"

namespace mrreparam::model {

template <typename Model>
io::Checkpoint model_checkpoint(Model& model, io::Json metadata) {
  io::Checkpoint ckpt;
  io::Json steps = io::Json::object();
  model.for_each_parameter([&](const std::string& name, nn::Parameter<float>& p) {
    ckpt.tensors.emplace_back(name, p.value);
    ckpt.tensors.emplace_back(name + ".adam_m", p.adam_m);
    ckpt.tensors.emplace_back(name + ".adam_v", p.adam_v);
    steps[name] = p.step_count;
  });
  model.for_each_buffer(
      [&](const std::string& name, Tensor& t) { ckpt.tensors.emplace_back(name, t); });
  metadata["adam_steps"] = std::move(steps);
  ckpt.metadata = std::move(metadata);
  return ckpt;
}

template <typename Model>
void load_model_tensors(Model& model, const io::Checkpoint& ckpt) {
  auto assign = [](const std::string& name, Tensor& dst, const Tensor& src) {
    if (dst.shape() != src.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(src.shape()) +
                        ", model expects " + shape_str(dst.shape()));
    }
    dst = src;
  };
  const auto& steps = ckpt.metadata.at("adam_steps");
  model.for_each_parameter([&](const std::string& name, nn::Parameter<float>& p) {
    assign(name, p.value, ckpt.tensor(name));
    assign(name + ".adam_m", p.adam_m, ckpt.tensor(name + ".adam_m"));
    assign(name + ".adam_v", p.adam_v, ckpt.tensor(name + ".adam_v"));
    p.step_count = steps.at(name).get<std::int64_t>();
    p.zero_grad();
  });
  model.for_each_buffer([&](const std::string& name, Tensor& t) { assign(name, t, ckpt.tensor(name)); });
}

}  // namespace mrreparam::model
