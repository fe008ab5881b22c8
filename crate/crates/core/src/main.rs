fn main() {
    println!("radapt CLI placeholder");
}
