#include <cstdio>

int main() {
  std::puts("afford: subcommands pending");
  return 0;
}
