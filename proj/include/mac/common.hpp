#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iostream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace mac {

// Dense indices assigned at ingestion. Scoped enums keep the four id spaces
// from mixing silently.
enum class UserId : std::uint32_t {};
enum class PoiId : std::uint32_t {};
enum class CategoryId : std::uint32_t {};
enum class RegionId : std::uint32_t {};

template <class Id>
constexpr std::size_t index(Id id) noexcept {
    return static_cast<std::size_t>(id);
}

template <class Id>
constexpr Id make_id(std::size_t i) noexcept {
    return static_cast<Id>(static_cast<std::uint32_t>(i));
}

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class ModelError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    NumericalError(std::string component, const std::string& what)
        : Error(component + ": " + what), component_(std::move(component)) {}
    const std::string& component() const noexcept { return component_; }

private:
    std::string component_;
};

class GenerationError : public Error {
public:
    using Error::Error;
};

class EvaluationError : public Error {
public:
    using Error::Error;
};

using Rng = std::mt19937_64;

struct GeoPoint {
    double lon = 0.0;
    double lat = 0.0;
    friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

// splitmix64 finalizer; used to derive independent streams from one seed.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                    std::uint64_t index = 0) noexcept {
    return mix64(mix64(base ^ mix64(stream)) + index);
}

namespace stream {
inline constexpr std::uint64_t split = 1;
inline constexpr std::uint64_t kmeans = 2;
inline constexpr std::uint64_t refgen = 3;
inline constexpr std::uint64_t model_init = 4;
inline constexpr std::uint64_t training = 5;
inline constexpr std::uint64_t sampling = 6;
inline constexpr std::uint64_t dims = 7;
inline constexpr std::uint64_t synthetic = 8;
}  // namespace stream

inline std::function<void(std::string_view)>& warning_sink() {
    static std::function<void(std::string_view)> sink = [](std::string_view msg) {
        std::cerr << "warning: " << msg << '\n';
    };
    return sink;
}

inline void warn(std::string_view msg) {
    if (auto& sink = warning_sink()) sink(msg);
}

// Silences or captures warnings for the lifetime of the guard.
class ScopedWarningSink {
public:
    explicit ScopedWarningSink(std::function<void(std::string_view)> sink)
        : previous_(std::exchange(warning_sink(), std::move(sink))) {}
    ~ScopedWarningSink() { warning_sink() = std::move(previous_); }
    ScopedWarningSink(const ScopedWarningSink&) = delete;
    ScopedWarningSink& operator=(const ScopedWarningSink&) = delete;

private:
    std::function<void(std::string_view)> previous_;
};

}  // namespace mac
