#include "holderpo/schedule.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "holderpo/errors.hpp"

namespace holderpo {

namespace {

std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

std::string_view to_string(ScheduleShape shape) {
  switch (shape) {
    case ScheduleShape::kConstant: return "constant";
    case ScheduleShape::kLinear: return "linear";
    case ScheduleShape::kSquare: return "square";
    case ScheduleShape::kCube: return "cube";
    case ScheduleShape::kSin: return "sin";
  }
  return "constant";
}

std::string_view to_string(ScheduleDirection direction) {
  return direction == ScheduleDirection::kDescending ? "descending" : "ascending";
}

ScheduleShape parse_schedule_shape(std::string_view name) {
  if (name == "constant") return ScheduleShape::kConstant;
  if (name == "linear") return ScheduleShape::kLinear;
  if (name == "square") return ScheduleShape::kSquare;
  if (name == "cube") return ScheduleShape::kCube;
  if (name == "sin") return ScheduleShape::kSin;
  throw DomainError("unknown schedule shape '" + std::string(name) + "'");
}

ScheduleDirection parse_schedule_direction(std::string_view name) {
  if (name == "descending") return ScheduleDirection::kDescending;
  if (name == "ascending") return ScheduleDirection::kAscending;
  throw DomainError("unknown schedule direction '" + std::string(name) + "'");
}

ScheduleSpec ScheduleSpec::constant(double p, long total_steps) {
  ScheduleSpec s;
  s.p_high = p;
  s.p_low = p;
  s.total_steps = total_steps;
  s.shape = ScheduleShape::kConstant;
  return s;
}

void ScheduleSpec::validate() const {
  if (!std::isfinite(p_high) || !std::isfinite(p_low)) {
    throw DomainError("schedule endpoints must be finite");
  }
  if (total_steps < 1) throw DomainError("schedule total_steps must be positive");
  if (shape != ScheduleShape::kConstant && p_high < p_low) {
    throw DomainError("schedule requires p_high >= p_low");
  }
}

double ScheduleSpec::start_value() const {
  if (shape == ScheduleShape::kConstant) return p_high;
  return direction == ScheduleDirection::kDescending ? p_high : p_low;
}

double ScheduleSpec::end_value() const {
  if (shape == ScheduleShape::kConstant) return p_high;
  return direction == ScheduleDirection::kDescending ? p_low : p_high;
}

std::string ScheduleSpec::label() const {
  if (shape == ScheduleShape::kConstant) return "static_" + format_number(p_high);
  std::string name(to_string(shape));
  if (direction == ScheduleDirection::kAscending) name += "_asc";
  return name + "_" + format_number(start_value()) + "_" + format_number(end_value());
}

ScheduleSpec parse_schedule_label(std::string_view label) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : label) {
    if (c == '_') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);

  auto number = [&](const std::string& text) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != text.size() || !std::isfinite(v)) {
      throw DomainError("bad number '" + text + "' in schedule label '" + std::string(label) + "'");
    }
    return v;
  };

  if (parts.size() == 2 && parts[0] == "static") return ScheduleSpec::constant(number(parts[1]));
  const bool ascending = parts.size() == 4 && parts[1] == "asc";
  if (parts.size() != 3 && !ascending) {
    throw DomainError("schedule label '" + std::string(label) +
                      "' is not of the form shape[_asc]_start_end or static_p");
  }
  ScheduleSpec s;
  s.shape = parse_schedule_shape(parts[0]);
  if (s.shape == ScheduleShape::kConstant) {
    throw DomainError("use static_p for a constant schedule label");
  }
  const double start = number(parts[parts.size() - 2]);
  const double end = number(parts.back());
  s.direction = ascending ? ScheduleDirection::kAscending : ScheduleDirection::kDescending;
  s.p_high = ascending ? end : start;
  s.p_low = ascending ? start : end;
  s.validate();
  return s;
}

double schedule_easing(ScheduleShape shape, double u) {
  switch (shape) {
    case ScheduleShape::kConstant: return 0.0;
    case ScheduleShape::kLinear: return u;
    case ScheduleShape::kSquare: return u * u;
    case ScheduleShape::kCube: return u * u * u;
    case ScheduleShape::kSin: return std::sin(std::numbers::pi * u / 2.0);
  }
  return u;
}

double p_at(const ScheduleSpec& spec, long step) {
  spec.validate();
  if (step < 0 || step > spec.total_steps) {
    throw DomainError("schedule step " + std::to_string(step) + " outside [0, " +
                      std::to_string(spec.total_steps) + "]");
  }
  if (spec.shape == ScheduleShape::kConstant) return spec.p_high;
  // Endpoints are returned verbatim so they are hit bit-exactly.
  if (step == 0) return spec.start_value();
  if (step == spec.total_steps) return spec.end_value();
  const double u = static_cast<double>(step) / static_cast<double>(spec.total_steps);
  const double phi = schedule_easing(spec.shape, u);
  if (spec.direction == ScheduleDirection::kDescending) {
    return spec.p_high + (spec.p_low - spec.p_high) * phi;
  }
  return spec.p_low + (spec.p_high - spec.p_low) * phi;
}

std::string_view schedule_convention() {
  return "u = step / total_steps; phi = u (linear), u^2 (square), u^3 (cube), "
         "sin(pi u / 2) (sin); descending p = p_high + (p_low - p_high) phi; "
         "ascending p = p_low + (p_high - p_low) phi; constant p = p_high";
}

}  // namespace holderpo
