#pragma once

#include <string>
#include <string_view>

namespace holderpo {

enum class ScheduleShape { kConstant, kLinear, kSquare, kCube, kSin };
enum class ScheduleDirection { kDescending, kAscending };

std::string_view to_string(ScheduleShape shape);
std::string_view to_string(ScheduleDirection direction);
ScheduleShape parse_schedule_shape(std::string_view name);
ScheduleDirection parse_schedule_direction(std::string_view name);

// p(t) over update steps t in [0, total_steps]. Descending runs p_high -> p_low,
// ascending runs p_low -> p_high; a constant schedule stays at p_high.
struct ScheduleSpec {
  double p_high = 0.0;
  double p_low = 0.0;
  long total_steps = 1;
  ScheduleShape shape = ScheduleShape::kConstant;
  ScheduleDirection direction = ScheduleDirection::kDescending;

  static ScheduleSpec constant(double p, long total_steps = 1);

  void validate() const;
  double start_value() const;
  double end_value() const;
  // e.g. "linear_2_-2", "sin_asc_-2_2", "static_1"
  std::string label() const;
};

// Inverse of ScheduleSpec::label(): "static_1", "linear_2_-2", "sin_asc_-2_2".
// total_steps is left at 1 for the caller to resolve.
ScheduleSpec parse_schedule_label(std::string_view label);

// Easing phi: [0,1] -> [0,1], phi(0) = 0, phi(1) = 1.
double schedule_easing(ScheduleShape shape, double u);

double p_at(const ScheduleSpec& spec, long step);

// Human-readable statement of the interpolation convention, stored in run metadata.
std::string_view schedule_convention();

}  // namespace holderpo
