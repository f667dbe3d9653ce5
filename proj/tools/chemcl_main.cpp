#include <cstdio>
int main() { std::puts("usage: chemcl <command>"); return 2; }
