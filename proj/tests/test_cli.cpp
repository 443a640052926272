// placeholder; filled in with CLI contract tests
#include <doctest.h>
