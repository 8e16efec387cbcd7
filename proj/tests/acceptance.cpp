#include "mfglq/mfglq.hpp"
int main() { return 0; }
