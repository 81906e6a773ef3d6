fn main() {
    println!("qforms CLI scaffold");
}
