#pragma once

namespace vip {

/// Selects the serial reference path or the OpenMP path of a kernel. Both
/// paths reduce in index order and produce bit-identical results.
enum class Exec { serial, parallel };

}  // namespace vip
