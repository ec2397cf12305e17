#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mvrisk/core/autograd.hpp"
#include "mvrisk/core/rng.hpp"

namespace mvrisk {

template <typename T>
struct ParamEntry {
    std::string path;
    std::string group;
    ag::Var<T> var;
};

// Named parameter tensors organized in groups. A group declared frozen is
// frozen for the lifetime of the store: its tensors never require grad and
// cannot be made trainable.
template <typename T>
class ParamStore {
public:
    void declare_group(const std::string& group, bool frozen) {
        auto it = frozen_.find(group);
        if (it != frozen_.end()) {
            if (it->second != frozen) throw FrozenViolation("group '" + group + "' frozen flag is immutable");
            return;
        }
        frozen_[group] = frozen;
    }

    bool group_frozen(const std::string& group) const {
        auto it = frozen_.find(group);
        if (it == frozen_.end()) throw ConfigError("unknown parameter group '" + group + "'");
        return it->second;
    }

    const std::map<std::string, bool>& groups() const { return frozen_; }

    ag::Var<T> add(const std::string& path, const std::string& group, Tensor<T> init) {
        if (index_.count(path)) throw ConfigError("duplicate parameter path '" + path + "'");
        if (!frozen_.count(group)) frozen_[group] = false;
        const bool frozen = frozen_.at(group);
        ag::Var<T> v(std::move(init), !frozen);
        index_[path] = entries_.size();
        entries_.push_back({path, group, v});
        return v;
    }

    bool contains(const std::string& path) const { return index_.count(path) > 0; }

    const ag::Var<T>& get(const std::string& path) const {
        auto it = index_.find(path);
        if (it == index_.end()) throw MissingArtifact("no parameter '" + path + "'");
        return entries_[it->second].var;
    }

    const std::vector<ParamEntry<T>>& entries() const { return entries_; }

    // Marks exactly the listed groups as receiving gradients.
    void set_trainable(const std::set<std::string>& groups) {
        for (const auto& g : groups)
            if (group_frozen(g)) throw FrozenViolation("group '" + g + "' is frozen and cannot be trained");
        for (auto& e : entries_) {
            ag::Var<T> v = e.var;
            v.set_requires_grad(!frozen_.at(e.group) && groups.count(e.group) > 0);
        }
    }

    std::set<std::string> trainable_groups() const {
        std::set<std::string> out;
        for (const auto& e : entries_)
            if (e.var.requires_grad()) out.insert(e.group);
        return out;
    }

    void zero_grad() {
        for (auto& e : entries_) {
            ag::Var<T> v = e.var;
            v.zero_grad();
        }
    }

    std::size_t numel(const std::set<std::string>& groups = {}) const {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (groups.empty() || groups.count(e.group)) n += e.var.numel();
        return n;
    }

    // FNV-1a over the raw bytes of every tensor in the selected groups (all
    // groups when empty), in insertion order.
    std::uint64_t hash(const std::set<std::string>& groups = {}) const {
        std::uint64_t h = 1469598103934665603ULL;
        for (const auto& e : entries_) {
            if (!groups.empty() && !groups.count(e.group)) continue;
            for (char ch : e.path) h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ULL;
            const auto* bytes = reinterpret_cast<const unsigned char*>(e.var.value().data.data());
            for (std::size_t i = 0; i < e.var.numel() * sizeof(T); ++i) h = (h ^ bytes[i]) * 1099511628211ULL;
        }
        return h;
    }

    std::vector<Tensor<T>> snapshot() const {
        std::vector<Tensor<T>> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.var.value());
        return out;
    }

    void restore(const std::vector<Tensor<T>>& snap) {
        if (snap.size() != entries_.size()) throw Incompatible("snapshot size mismatch");
        for (std::size_t i = 0; i < snap.size(); ++i) {
            ag::Var<T> v = entries_[i].var;
            if (v.shape() != snap[i].shape) throw Incompatible("snapshot shape mismatch at " + entries_[i].path);
            v.mutable_value() = snap[i];
        }
    }

    // Overwrites values from another store with identical paths and shapes.
    template <typename U>
    void copy_values_from(const ParamStore<U>& other) {
        for (auto& e : entries_) {
            const auto& src = other.get(e.path).value();
            ag::Var<T> v = e.var;
            if (src.shape != v.shape()) throw Incompatible("shape mismatch for " + e.path);
            v.mutable_value().data.assign(src.data.begin(), src.data.end());
        }
    }

private:
    std::vector<ParamEntry<T>> entries_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, bool> frozen_;
};

namespace init {

template <typename T>
Tensor<T> zeros(Shape s) {
    return Tensor<T>(std::move(s), T{0});
}

template <typename T>
Tensor<T> ones(Shape s) {
    return Tensor<T>(std::move(s), T{1});
}

template <typename T>
Tensor<T> normal(Shape s, double stddev, Rng& rng) {
    Tensor<T> t(std::move(s));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data) v = static_cast<T>(dist(rng));
    return t;
}

template <typename T>
Tensor<T> uniform(Shape s, double bound, Rng& rng) {
    Tensor<T> t(std::move(s));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.data) v = static_cast<T>(dist(rng));
    return t;
}

}  // namespace init

}  // namespace mvrisk
