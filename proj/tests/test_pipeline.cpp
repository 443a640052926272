// placeholder; filled in with end-to-end directional tests
#include <doctest.h>
