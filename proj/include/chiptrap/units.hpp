#pragma once

#include <numbers>

namespace chiptrap::units {

inline constexpr double pi = std::numbers::pi;

// CODATA 2018
inline constexpr double mu0 = 1.25663706212e-6;        // T m / A
inline constexpr double mu_bohr = 9.2740100783e-24;    // J / T
inline constexpr double k_boltzmann = 1.380649e-23;    // J / K
inline constexpr double hbar = 1.054571817e-34;        // J s
inline constexpr double rb87_mass = 1.443160648e-25;   // kg
inline constexpr double standard_gravity = 9.81;       // m / s^2

inline constexpr double gauss = 1e-4;
inline constexpr double milligauss = 1e-7;
inline constexpr double micrometer = 1e-6;
inline constexpr double millimeter = 1e-3;
inline constexpr double milliampere = 1e-3;
inline constexpr double millisecond = 1e-3;
inline constexpr double microkelvin = 1e-6;
inline constexpr double nanokelvin = 1e-9;

}  // namespace chiptrap::units
