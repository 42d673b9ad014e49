#include "qkck/linalg.hpp"
// placeholder
