#include <cstdio>

int main() {
  std::puts("racepred cli placeholder");
  return 0;
}
