// placeholder; filled in with the acceptance criteria
#include <doctest.h>
