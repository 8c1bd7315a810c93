if __name__ == "__main__":
    # Settings read .env on import, so the CLI is imported only once the process starts.
    from mixbt.cli import main

    # Same as `python -m mixbt.cli ...`; every subcommand prints a final RESULT line.
    main()
