// placeholder so the target links while the library stabilizes
int main() { return 0; }
