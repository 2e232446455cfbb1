#include "rlm/rlm.hpp"
int main(){return 0;}
