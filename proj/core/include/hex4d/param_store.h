#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "hex4d/tensor.h"

namespace hex4d {

// Learning-rate groups: plane grids train at the high grid rate, MLP heads and
// enhancer weights at a smaller dense rate.
enum class LrGroup : uint8_t { grids = 0, mlp = 1 };

template <class S>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    LrGroup group;
    Tensor<S> value;
    Tensor<S> grad;  // same shape as value, zeroed between steps
  };

  // Registers a named tensor. Names are unique and shapes immutable afterwards.
  int add(const std::string& name, Tensor<S> init, LrGroup group) {
    H4D_CHECK(!index_.count(name), "duplicate parameter name: ", name);
    Entry e;
    e.name = name;
    e.group = group;
    e.grad = Tensor<S>(init.shape);
    e.value = std::move(init);
    entries_.push_back(std::move(e));
    int idx = static_cast<int>(entries_.size()) - 1;
    index_[name] = idx;
    return idx;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    H4D_CHECK(it != index_.end(), "unknown parameter: ", name);
    return it->second;
  }

  Entry& entry(int i) { return entries_[static_cast<size_t>(i)]; }
  const Entry& entry(int i) const { return entries_[static_cast<size_t>(i)]; }
  Entry& entry(const std::string& name) { return entry(index_of(name)); }
  const Entry& entry(const std::string& name) const { return entry(index_of(name)); }

  Tensor<S>& value(const std::string& name) { return entry(name).value; }
  const Tensor<S>& value(const std::string& name) const { return entry(name).value; }
  Tensor<S>& grad(const std::string& name) { return entry(name).grad; }

  int size() const { return static_cast<int>(entries_.size()); }

  int64_t num_values() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) e.grad.fill(S(0));
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

struct AdamParams {
  double lr_grids = 0.1;
  double lr_mlp = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  double lr_for(LrGroup g) const { return g == LrGroup::grids ? lr_grids : lr_mlp; }
};

template <class S>
struct AdamState {
  AdamParams hp;
  int64_t step = 0;
  std::vector<Tensor<S>> m;  // first moments, aligned with store entries
  std::vector<Tensor<S>> v;  // second moments

  void init(const ParamStore<S>& ps) {
    m.clear();
    v.clear();
    for (int i = 0; i < ps.size(); ++i) {
      m.emplace_back(ps.entry(i).value.shape);
      v.emplace_back(ps.entry(i).value.shape);
    }
    step = 0;
  }
};

// One bias-corrected Adam update from the gradients currently in the store.
template <class S>
void adam_step(ParamStore<S>& ps, AdamState<S>& state);

extern template void adam_step(ParamStore<float>&, AdamState<float>&);
extern template void adam_step(ParamStore<double>&, AdamState<double>&);

}  // namespace hex4d
