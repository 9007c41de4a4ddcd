#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fidrank/errors.hpp"
#include "fidrank/numerics/autograd.hpp"
#include "fidrank/numerics/tensor.hpp"

namespace fidrank {

/// Named tensors in insertion order.
template <typename T>
class ParameterSet {
public:
    void add(std::string name, Tensor<T> value)
    {
        if (index_.contains(name)) {
            throw ContractError("duplicate parameter '" + name + "'");
        }
        index_.emplace(name, tensors_.size());
        names_.push_back(std::move(name));
        tensors_.push_back(std::move(value));
    }

    std::size_t size() const noexcept { return tensors_.size(); }
    bool contains(std::string_view name) const { return index_.contains(std::string(name)); }
    std::size_t index_of(std::string_view name) const
    {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) {
            throw IndexError("no parameter named '" + std::string(name) + "'");
        }
        return it->second;
    }

    const std::string& name(std::size_t i) const { return names_.at(i); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    Tensor<T>& operator[](std::size_t i) { return tensors_.at(i); }
    const Tensor<T>& operator[](std::size_t i) const { return tensors_.at(i); }
    Tensor<T>& operator[](std::string_view name) { return tensors_[index_of(name)]; }
    const Tensor<T>& operator[](std::string_view name) const { return tensors_[index_of(name)]; }
    std::vector<Tensor<T>>& tensors() noexcept { return tensors_; }
    const std::vector<Tensor<T>>& tensors() const noexcept { return tensors_; }

    std::size_t element_count() const
    {
        std::size_t n = 0;
        for (const auto& t : tensors_) {
            n += t.size();
        }
        return n;
    }

    template <typename U>
    ParameterSet<U> cast() const
    {
        ParameterSet<U> out;
        for (std::size_t i = 0; i < size(); ++i) {
            out.add(names_[i], tensors_[i].template cast<U>());
        }
        return out;
    }

    friend bool operator==(const ParameterSet& a, const ParameterSet& b)
    {
        return a.names_ == b.names_ && a.tensors_ == b.tensors_;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Graph leaves bound to a ParameterSet for one forward pass.
template <typename T>
class BoundParameters {
public:
    BoundParameters(const ParameterSet<T>& params, bool requires_grad) : params_(&params)
    {
        vars_.reserve(params.size());
        for (const auto& t : params.tensors()) {
            vars_.push_back(Var<T>::leaf(t, requires_grad));
        }
    }

    /// Binds caller-provided leaves (e.g. from grad_check) in ParameterSet order.
    BoundParameters(const ParameterSet<T>& params, std::vector<Var<T>> vars) : params_(&params), vars_(std::move(vars))
    {
        if (vars_.size() != params.size()) {
            throw ContractError("bound variable count does not match parameter count");
        }
    }

    const Var<T>& operator[](std::string_view name) const { return vars_[params_->index_of(name)]; }
    const Var<T>& operator[](std::size_t i) const { return vars_.at(i); }
    const std::vector<Var<T>>& vars() const noexcept { return vars_; }

private:
    const ParameterSet<T>* params_;
    std::vector<Var<T>> vars_;
};

}  // namespace fidrank
