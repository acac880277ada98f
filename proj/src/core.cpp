#include "ttsem/core.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>
#include <vector>

namespace ttsem {

SamplingError::SamplingError(std::string reason, std::size_t index, std::optional<std::int64_t> iter)
    : Error(reason + " (sample " + std::to_string(index) +
            (iter ? ", iteration " + std::to_string(*iter) : std::string()) + ")"),
      reason_(std::move(reason)),
      index_(index),
      iter_(iter) {}

bool all_finite(const Eigen::Ref<const Eigen::VectorXd>& v) { return v.allFinite(); }

StepSchedule::StepSchedule(ScheduleKind kind, double c, double a, std::int64_t warmup)
    : kind_(kind), c_(c), a_(a), warmup_(warmup) {
  if (!(c > 0.0 && c <= 1.0)) throw ConfigError("step schedule value must lie in (0, 1]");
  if (kind != ScheduleKind::constant && !(a > 0.0 && a < 1.0))
    throw ConfigError("polynomial step schedule exponent must lie in (0, 1)");
  if (warmup < 0) throw ConfigError("step schedule warmup must be non-negative");
}

StepSchedule StepSchedule::constant(double c) { return {ScheduleKind::constant, c, 0.0, 0}; }

StepSchedule StepSchedule::polynomial(double a, double c) { return {ScheduleKind::polynomial, c, a, 0}; }

StepSchedule StepSchedule::warmup_polynomial(double a, std::int64_t warmup_iters, double c) {
  return {ScheduleKind::warmup_polynomial, c, a, warmup_iters};
}

double StepSchedule::eval(std::int64_t k) const {
  switch (kind_) {
    case ScheduleKind::constant:
      return c_;
    case ScheduleKind::polynomial:
      return c_ / std::pow(static_cast<double>(k + 1), a_);
    case ScheduleKind::warmup_polynomial:
      if (k < warmup_) return 1.0;
      return c_ / std::pow(static_cast<double>(k - warmup_ + 1), a_);
  }
  return c_;
}

namespace {

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = text.find(sep, start);
    out.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_double(std::string_view s, std::string_view what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError("cannot parse " + std::string(what) + " from '" + std::string(s) + "'");
  return v;
}

}  // namespace

StepSchedule StepSchedule::parse(std::string_view text, std::int64_t epoch_iters) {
  auto parts = split(text, ':');
  if (parts.empty()) throw ConfigError("empty step schedule");
  if (parts[0] == "const" || parts[0] == "constant") {
    if (parts.size() != 2) throw ConfigError("expected const:<c>, got '" + std::string(text) + "'");
    return constant(parse_double(parts[1], "schedule value"));
  }
  if (parts[0] != "poly" || parts.size() < 2)
    throw ConfigError("unknown step schedule '" + std::string(text) + "'");
  double a = parse_double(parts[1], "schedule exponent");
  double c = 1.0;
  std::optional<std::int64_t> warmup;
  for (std::size_t p = 2; p < parts.size(); ++p) {
    auto eq = parts[p].find('=');
    if (eq == std::string_view::npos) throw ConfigError("bad schedule option '" + std::string(parts[p]) + "'");
    auto key = parts[p].substr(0, eq);
    auto val = parts[p].substr(eq + 1);
    if (key == "c") {
      c = parse_double(val, "schedule value");
    } else if (key == "warmup") {
      if (val.size() > 2 && val.substr(val.size() - 2) == "ep") {
        double epochs = parse_double(val.substr(0, val.size() - 2), "warmup epochs");
        warmup = static_cast<std::int64_t>(std::ceil(epochs * static_cast<double>(epoch_iters)));
      } else {
        warmup = static_cast<std::int64_t>(parse_double(val, "warmup iterations"));
      }
    } else {
      throw ConfigError("unknown schedule option '" + std::string(key) + "'");
    }
  }
  if (warmup && *warmup > 0) return warmup_polynomial(a, *warmup, c);
  return polynomial(a, c);
}

std::string StepSchedule::describe() const {
  std::ostringstream os;
  switch (kind_) {
    case ScheduleKind::constant:
      os << "const:" << c_;
      break;
    case ScheduleKind::polynomial:
      os << "poly:" << a_ << ":c=" << c_;
      break;
    case ScheduleKind::warmup_polynomial:
      os << "poly:" << a_ << ":c=" << c_ << ":warmup=" << warmup_;
      break;
  }
  return os.str();
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::EM: return "EM";
    case Variant::iEM: return "iEM";
    case Variant::MCEM: return "MCEM";
    case Variant::SAEM: return "SAEM";
    case Variant::iSAEM: return "iSAEM";
    case Variant::vrTTEM: return "vrTTEM";
    case Variant::fiTTEM: return "fiTTEM";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::EM, Variant::iEM, Variant::MCEM, Variant::SAEM, Variant::iSAEM, Variant::vrTTEM,
                 Variant::fiTTEM}) {
    auto s = to_string(v);
    if (s.size() == name.size() &&
        std::equal(s.begin(), s.end(), name.begin(), [](char a, char b) { return std::tolower(a) == std::tolower(b); }))
      return v;
  }
  throw ConfigError("unknown algorithm '" + std::string(name) + "'");
}

bool is_batch(Variant v) { return v == Variant::EM || v == Variant::MCEM || v == Variant::SAEM; }

std::int64_t epoch_iterations(Variant v, std::size_t n) {
  return is_batch(v) ? 1 : static_cast<std::int64_t>(n);
}

RunConfig RunConfig::defaults_for(Variant v, std::size_t n) {
  RunConfig cfg;
  cfg.variant = v;
  switch (v) {
    case Variant::EM:
    case Variant::iEM:
      cfg.estep = EStep::exact;
      cfg.gamma = StepSchedule::constant(1.0);
      break;
    case Variant::MCEM:
      cfg.gamma = StepSchedule::constant(1.0);
      break;
    case Variant::SAEM:
    case Variant::iSAEM:
    case Variant::vrTTEM:
    case Variant::fiTTEM:
      cfg.gamma = StepSchedule::warmup_polynomial(0.5, epoch_iterations(v, n));
      break;
  }
  if (v == Variant::vrTTEM || v == Variant::fiTTEM) {
    cfg.rho = n > 0 ? std::pow(static_cast<double>(n), -2.0 / 3.0) : 1.0;
    cfg.epoch_len = std::max<std::int64_t>(1, static_cast<std::int64_t>(n));
  }
  return cfg;
}

void RunConfig::validate() const {
  const std::string name(to_string(variant));
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError(name + ": rho must lie in (0, 1]");
  if (mc_samples < 1) throw ConfigError(name + ": mc_samples must be at least 1");
  if (total_iters < 0) throw ConfigError(name + ": total iterations must be non-negative");
  if (randomized_termination && total_iters == 0)
    throw ConfigError(name + ": randomized termination needs at least one iteration");
  switch (variant) {
    case Variant::EM:
    case Variant::iEM:
      if (estep != EStep::exact) throw ConfigError(name + " requires the exact E-step");
      if (!gamma.is_identically_one()) throw ConfigError(name + " requires gamma = 1");
      if (rho != 1.0) throw ConfigError(name + " requires rho = 1");
      break;
    case Variant::MCEM:
      if (!gamma.is_identically_one()) throw ConfigError(name + " requires gamma = 1");
      if (rho != 1.0) throw ConfigError(name + " requires rho = 1");
      break;
    case Variant::SAEM:
    case Variant::iSAEM:
      if (rho != 1.0) throw ConfigError(name + " requires rho = 1");
      break;
    case Variant::vrTTEM:
      if (epoch_len < 1) throw ConfigError(name + ": epoch length must be at least 1");
      break;
    case Variant::fiTTEM:
      break;
  }
}

}  // namespace ttsem
