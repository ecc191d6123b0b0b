#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ntklab {

enum class Activation { relu, erf, tanh };

/// ReLU and erf have closed-form Gaussian moments; tanh needs quadrature.
constexpr bool has_closed_form(Activation a) noexcept { return a != Activation::tanh; }

inline double activate(Activation a, double x) noexcept {
    switch (a) {
        case Activation::relu: return x > 0.0 ? x : 0.0;
        case Activation::erf: return std::erf(x);
        case Activation::tanh: return std::tanh(x);
    }
    return 0.0;
}

/// ReLU'(0) is defined as 0.
inline double activate_derivative(Activation a, double x) noexcept {
    switch (a) {
        case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
        case Activation::erf: return 2.0 / std::sqrt(std::numbers::pi) * std::exp(-x * x);
        case Activation::tanh: {
            const double t = std::tanh(x);
            return 1.0 - t * t;
        }
    }
    return 0.0;
}

constexpr std::string_view to_string(Activation a) noexcept {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::erf: return "erf";
        case Activation::tanh: return "tanh";
    }
    return "?";
}

inline Activation parse_activation(std::string_view name) {
    if (name == "relu" || name == "ReLU") return Activation::relu;
    if (name == "erf") return Activation::erf;
    if (name == "tanh") return Activation::tanh;
    throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

}  // namespace ntklab
