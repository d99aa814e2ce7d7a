#include "vigeo/tensor.hpp"

namespace vigeo {

namespace {
bool g_deterministic = true;
}

bool deterministic() { return g_deterministic; }
void set_deterministic(bool on) { g_deterministic = on; }

}  // namespace vigeo
