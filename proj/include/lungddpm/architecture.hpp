#pragma once

#include <string>
#include <vector>

namespace lungddpm {

enum class LayerKind { conv3d, dense, attention };

/// One layer of a predictor network, enough to count its arithmetic.
struct LayerSpec {
  LayerKind kind = LayerKind::conv3d;
  int kernel = 3;  // cubic kernel edge, stride 1, same padding
  int c_in = 1;
  int c_out = 1;
};

struct ArchitectureDescriptor {
  std::string name;
  std::vector<LayerSpec> layers;
};

}  // namespace lungddpm
