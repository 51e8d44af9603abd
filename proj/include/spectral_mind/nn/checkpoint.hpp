#pragma once

// Model checkpoints (.eegm): the shared container envelope with a JSON header
// describing the architecture and every tensor, followed by the float32 values
// of all parameters and persistent state in layer order.

#include <string>
#include <vector>

#include "spectral_mind/container.hpp"
#include "spectral_mind/nn/network.hpp"

namespace smind::nn {

template <class T>
std::unique_ptr<Layer<T>> make_layer(LayerKind kind, const json& h) {
  switch (kind) {
    case LayerKind::Conv2D: return std::make_unique<Conv2D<T>>(h.at("in_channels"), h.at("filters"));
    case LayerKind::BatchNorm2D:
      return std::make_unique<BatchNorm2D<T>>(h.at("channels"), h.at("eps").get<double>(), h.at("momentum").get<double>());
    case LayerKind::ReLU: return std::make_unique<ReLU<T>>();
    case LayerKind::MaxPool2D: return std::make_unique<MaxPool2D<T>>();
    case LayerKind::Flatten: return std::make_unique<Flatten<T>>();
    case LayerKind::Dense: return std::make_unique<Dense<T>>(h.at("in"), h.at("out"));
    case LayerKind::Softmax: return std::make_unique<Softmax<T>>();
    case LayerKind::Dropout: return std::make_unique<Dropout<T>>(h.at("rate").get<double>());
    case LayerKind::LSTM:
      return std::make_unique<LSTM<T>>(h.at("input_dim"), h.at("hidden"), h.at("return_sequences").get<bool>());
  }
  throw DataError("unsupported layer kind");
}

template <class T>
void save_checkpoint(Network<T>& net, const std::string& path) {
  json layers = json::array();
  std::vector<float> payload;
  for (std::size_t i = 0; i < net.size(); ++i) {
    auto& l = net.layer(i);
    json tensors = json::array();
    const auto push = [&](const std::string& name, const Tensor<T>& t, const char* role) {
      tensors.push_back({{"name", name}, {"shape", t.shape}, {"role", role}});
      for (T v : t.data) payload.push_back(static_cast<float>(v));
    };
    for (auto* p : l.params()) push(p->name, p->value, "param");
    for (auto& [name, t] : l.state()) push(name, *t, "state");
    layers.push_back({{"kind", to_string(l.kind())}, {"hyper", l.hyper()}, {"tensors", tensors}});
  }
  json h;
  h["schema_version"] = kSchemaVersion;
  h["kind"] = "model";
  h["architecture"] = net.architecture();
  h["input_shape"] = net.input_shape();
  h["layers"] = layers;
  write_container(path, magic::model, h, payload);
}

template <class T = float>
Network<T> load_checkpoint(const std::string& path) {
  Container c = read_container(path, magic::model);
  Network<T> net;
  try {
    net.set_architecture(c.header.at("architecture"));
    net.set_input_shape(c.header.at("input_shape").get<Shape>());
    std::size_t offset = 0;
    for (const auto& ld : c.header.at("layers")) {
      auto layer = make_layer<T>(parse_layer_kind(ld.at("kind").get<std::string>()), ld.at("hyper"));
      std::vector<Tensor<T>*> slots;
      for (auto* p : layer->params()) slots.push_back(&p->value);
      for (auto& st : layer->state()) slots.push_back(st.second);
      const auto& tensors = ld.at("tensors");
      if (tensors.size() != slots.size())
        throw DataError(path + ": layer " + ld.at("kind").get<std::string>() + " tensor count mismatch");
      for (std::size_t k = 0; k < slots.size(); ++k) {
        const Shape shape = tensors[k].at("shape").get<Shape>();
        if (shape != slots[k]->shape)
          throw DataError(path + ": tensor '" + tensors[k].at("name").get<std::string>() + "' has shape " +
                          shape_str(shape) + ", layer expects " + shape_str(slots[k]->shape));
        if (offset + slots[k]->size() > c.payload.size()) throw DataError(path + ": payload too short");
        for (std::size_t v = 0; v < slots[k]->size(); ++v) (*slots[k])[v] = static_cast<T>(c.payload[offset + v]);
        offset += slots[k]->size();
      }
      net.add(std::move(layer));
    }
    if (offset != c.payload.size()) throw DataError(path + ": payload has trailing values");
  } catch (const json::exception& e) {
    throw DataError(path + ": offset 12: malformed model header: " + e.what());
  }
  return net;
}

// Copies parameters and state from `src` into `dst`; both must have the same
// layer kinds and tensor shapes.
template <class T>
void copy_weights(Network<T>& dst, Network<T>& src) {
  if (dst.size() != src.size())
    throw DataError("checkpoint shape mismatch: " + std::to_string(src.size()) + " layers, model expects " +
                    std::to_string(dst.size()));
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst.layer(i).kind() != src.layer(i).kind())
      throw DataError("checkpoint shape mismatch: layer " + std::to_string(i) + " is " +
                      to_string(src.layer(i).kind()) + ", model expects " + to_string(dst.layer(i).kind()));
    auto dp = dst.layer(i).params();
    auto sp = src.layer(i).params();
    for (std::size_t k = 0; k < dp.size(); ++k)
      if (dp[k]->value.shape != sp[k]->value.shape)
        throw DataError("checkpoint shape mismatch: layer " + std::to_string(i) + " tensor '" + dp[k]->name +
                        "' is " + shape_str(sp[k]->value.shape) + ", model expects " + shape_str(dp[k]->value.shape));
  }
  dst.restore(src.snapshot());
}

}  // namespace smind::nn
