#pragma once

namespace esd {

/// Serial reference loops or their OpenMP counterparts. Both produce
/// identical results; the serial path is what tests treat as ground truth.
enum class Kernel { serial, openmp };

}  // namespace esd
