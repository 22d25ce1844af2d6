/**
 * @file   params.hpp
 * @brief  Named parameter storage.
 */
#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tensor.hpp"

namespace gwai {

/// Ordered name -> tensor table. Insertion order is preserved so the
/// checkpoint writer reproduces files byte for byte.
template <class T>
class ParamStore {
public:
    void add(std::string name, Tensor<T> t) {
        if (index_.contains(name)) throw ValidationError("duplicate parameter name '" + name + "'");
        t.set_requires_grad(true);
        index_.emplace(name, entries_.size());
        entries_.emplace_back(std::move(name), std::move(t));
    }

    bool contains(std::string_view name) const { return index_.find(std::string(name)) != index_.end(); }

    const Tensor<T>& at(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) throw ValidationError("missing parameter '" + std::string(name) + "'");
        return entries_[it->second].second;
    }
    Tensor<T>& at(std::string_view name) {
        return const_cast<Tensor<T>&>(static_cast<const ParamStore&>(*this).at(name));
    }
    const Tensor<T>& operator[](std::string_view name) const { return at(name); }

    std::size_t size() const { return entries_.size(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }

    /// Tensors whose name starts with `prefix` (e.g. "wnet.").
    std::vector<Tensor<T>> group(std::string_view prefix) const {
        std::vector<Tensor<T>> out;
        for (const auto& [n, t] : entries_)
            if (n.starts_with(prefix)) out.push_back(t);
        return out;
    }
    std::vector<std::string> names(std::string_view prefix = "") const {
        std::vector<std::string> out;
        for (const auto& [n, t] : entries_)
            if (n.starts_with(prefix)) out.push_back(n);
        return out;
    }

    std::size_t count(std::string_view prefix = "") const {
        std::size_t n = 0;
        for (const auto& [name, t] : entries_)
            if (name.starts_with(prefix)) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [n, t] : entries_) t.zero_grad();
    }

    void set_trainable(std::string_view prefix, bool on) {
        for (auto& [n, t] : entries_)
            if (n.starts_with(prefix)) t.set_requires_grad(on);
    }

    ParamStore clone() const {
        ParamStore out;
        for (const auto& [n, t] : entries_) {
            out.add(n, t.clone());
            out.at(n).set_requires_grad(t.requires_grad());
        }
        return out;
    }

    template <class U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [n, t] : entries_) {
            std::vector<U> v(t.data().begin(), t.data().end());
            out.add(n, Tensor<U>(t.shape(), std::move(v)));
        }
        return out;
    }

private:
    std::vector<std::pair<std::string, Tensor<T>>> entries_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

}  // namespace gwai
