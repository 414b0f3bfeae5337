#include "ptee/param_store.hpp"

#include <cmath>
#include <cstring>

namespace ptee {

nn::Tensor& ParameterStore::create(const std::string& name, nn::Shape shape, bool buffer) {
  if (entries_.count(name)) throw Error("params", "duplicate parameter name '" + name + "'");
  Entry e;
  e.tensor = nn::Tensor::zeros(std::move(shape));
  e.buffer = buffer;
  e.tensor.set_requires_grad(!buffer);
  auto [it, ok] = entries_.emplace(name, std::move(e));
  (void)ok;
  return it->second.tensor;
}

nn::Tensor& ParameterStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("params", "unknown parameter '" + name + "'");
  return it->second.tensor;
}

const nn::Tensor& ParameterStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("params", "unknown parameter '" + name + "'");
  return it->second.tensor;
}

bool ParameterStore::is_frozen(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("params", "unknown parameter '" + name + "'");
  return it->second.frozen;
}

bool ParameterStore::is_buffer(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("params", "unknown parameter '" + name + "'");
  return it->second.buffer;
}

void ParameterStore::freeze_prefix(const std::string& prefix) {
  for (auto& [name, e] : entries_) {
    if (name.rfind(prefix, 0) != 0) continue;
    e.frozen = true;
    e.tensor.set_requires_grad(false);
    e.tensor.zero_grad();
  }
}

bool ParameterStore::all_frozen(const std::string& prefix) const {
  for (const auto& [name, e] : entries_) {
    if (name.rfind(prefix, 0) != 0) continue;
    if (!e.frozen) return false;
  }
  return true;
}

void ParameterStore::zero_grads() {
  for (auto& [name, e] : entries_) {
    (void)name;
    e.tensor.zero_grad();
  }
}

std::int64_t ParameterStore::trainable_count() const {
  std::int64_t n = 0;
  for (const auto& [name, e] : entries_) {
    (void)name;
    if (!e.frozen && !e.buffer) n += e.tensor.numel();
  }
  return n;
}

ParameterStore ParameterStore::clone() const {
  ParameterStore out;
  for (const auto& [name, e] : entries_) {
    Entry c;
    c.tensor = nn::Tensor::from_values(e.tensor.shape(),
                                       std::vector<float>(e.tensor.values().begin(), e.tensor.values().end()));
    c.frozen = e.frozen;
    c.buffer = e.buffer;
    c.tensor.set_requires_grad(!e.buffer && !e.frozen);
    out.entries_.emplace(name, std::move(c));
  }
  return out;
}

std::uint64_t ParameterStore::content_hash(const std::string& prefix) const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix_bytes = [&h](const void* data, std::size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, e] : entries_) {
    if (name.rfind(prefix, 0) != 0) continue;
    mix_bytes(name.data(), name.size());
    const unsigned char flags = static_cast<unsigned char>((e.frozen ? 1 : 0) | (e.buffer ? 2 : 0));
    mix_bytes(&flags, 1);
    mix_bytes(e.tensor.values().data(), e.tensor.values().size() * sizeof(float));
  }
  return h;
}

void he_init(nn::Tensor& w, std::int64_t fan_in, Rng& rng) {
  const float std_dev = std::sqrt(2.0f / static_cast<float>(fan_in));
  for (auto& v : w.values_mut()) v = std_dev * rng.normal();
}

}  // namespace ptee
